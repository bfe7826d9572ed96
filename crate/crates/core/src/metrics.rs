//! Statistical scoring: Pearson correlation, ROC-AUC, 95% confidence
//! intervals, and the disentanglement error built from four correlations.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// Product-moment correlation between two equal-length vectors.
///
/// Needs at least three points and nonzero variance on both sides; constant
/// input yields an undefined-correlation error so callers can record the cell
/// as missing rather than zero.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape(
            "pearson",
            format!("{} values", x.len()),
            format!("{}", y.len()),
        ));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientSamples {
            context: "pearson",
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation(format!(
            "zero variance (sxx = {sxx}, syy = {syy})"
        )));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Mann-Whitney ROC-AUC: the probability that a positive outscores a
/// negative, with half credit for ties.
///
/// Computed from average ranks, which matches brute-force enumeration of all
/// (positive, negative) pairs exactly. The final division happens on the
/// smaller side of the statistic so that negating every score yields exactly
/// `1 - auc`.
pub fn roc_auc(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::shape(
            "roc_auc",
            format!("{} flags", scores.len()),
            format!("{}", positives.len()),
        ));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("roc_auc", "scores must be finite"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::domain(
            "roc_auc",
            format!("need both populations, got {n_pos} positives / {n_neg} negatives"),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // Average rank within each tied group; ranks are 1-based so every value
    // is an integer or half-integer, exact in f64.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positives[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let np = n_pos as f64;
    let nn = n_neg as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    let d = np * nn;
    // Dividing min(u, d-u) keeps the complement identity bit-exact.
    if 2.0 * u <= d {
        Ok(u / d)
    } else {
        Ok(1.0 - (d - u) / d)
    }
}

/// Four observed correlations and their distance from the ideal pattern
/// (0, 1, 1, 0): aleatoric flat in dataset size, epistemic tracking it, and
/// the reverse under label noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeResult {
    pub pcc_ds_ale: f64,
    pub pcc_ds_epi: f64,
    pub pcc_noise_ale: f64,
    pub pcc_noise_epi: f64,
    /// Sum of the four absolute deviations.
    pub de_sum: f64,
    /// `de_sum / 4`, the magnitude usually reported.
    pub de_mean: f64,
}

/// Scores how far four correlations sit from ideal disentanglement.
pub fn disentanglement_error(
    pcc_ds_ale: f64,
    pcc_ds_epi: f64,
    pcc_noise_ale: f64,
    pcc_noise_epi: f64,
) -> Result<DeResult> {
    for (name, v) in [
        ("pcc_ds_ale", pcc_ds_ale),
        ("pcc_ds_epi", pcc_ds_epi),
        ("pcc_noise_ale", pcc_noise_ale),
        ("pcc_noise_epi", pcc_noise_epi),
    ] {
        if !(-1.0..=1.0).contains(&v) {
            return Err(Error::domain(
                "disentanglement_error",
                format!("{name} = {v} outside [-1, 1]"),
            ));
        }
    }
    let de_sum = pcc_ds_ale.abs()
        + (pcc_ds_epi - 1.0).abs()
        + (pcc_noise_ale - 1.0).abs()
        + pcc_noise_epi.abs();
    Ok(DeResult {
        pcc_ds_ale,
        pcc_ds_epi,
        pcc_noise_ale,
        pcc_noise_epi,
        de_sum,
        de_mean: de_sum / 4.0,
    })
}

/// Mean with a Student-t 95% confidence halfwidth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub mean: f64,
    pub ci95_halfwidth: f64,
    pub n: usize,
}

/// Mean and `t(n-1, 0.975) * sd / sqrt(n)` halfwidth; needs n >= 2.
pub fn ci95(values: &[f64]) -> Result<SummaryRow> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSamples {
            context: "ci95",
            needed: 2,
            got: n,
        });
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (nf - 1.0)).sqrt();
    let halfwidth = if sd == 0.0 {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, nf - 1.0)
            .expect("valid dof")
            .inverse_cdf(0.975);
        t * sd / nf.sqrt()
    };
    Ok(SummaryRow {
        mean,
        ci95_halfwidth: halfwidth,
        n,
    })
}
