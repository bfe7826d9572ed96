//! Splits stacked stochastic predictions into aleatoric and epistemic parts.
//!
//! Two estimators are provided. The information-theoretic (IT) path works on a
//! [`ProbEnsemble`] of per-pass probability rows: total uncertainty is the
//! entropy of the mean distribution, aleatoric the mean of per-pass entropies,
//! and epistemic their difference (the mutual information between prediction
//! and parameters). The Gaussian-logits (GL) path works on
//! [`GaussianLogitSamples`] of per-pass logit means and variances: aleatoric
//! variance is the mean of the per-pass variances, epistemic variance is the
//! spread of the per-pass means, and each is turned into an entropy through a
//! sampled softmax. [`gl_head_loss`] is the matching training objective for
//! networks with a mean/variance output head.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{softmax, Matrix, PROB_FLOOR};
use crate::{seed, Error, Result};

/// Slack allowed on each ensemble row's sum.
const ROW_SUM_TOL: f64 = 1e-9;
/// Slack allowed on the sum of an [`entropy`] input.
const SIMPLEX_TOL: f64 = 1e-6;

/// Shannon entropy in nats of a probability vector, with `0 ln 0 := 0`.
///
/// The sum may deviate from one by at most `1e-6`; anything further off the
/// simplex (including negative entries) is a domain error.
pub fn entropy(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(Error::domain("entropy", "empty probability vector"));
    }
    let mut sum = 0.0;
    for &v in p {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(
                "entropy",
                format!("entry {v} is not a probability"),
            ));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::domain(
            "entropy",
            format!("probabilities sum to {sum}, not 1"),
        ));
    }
    let mut h = 0.0;
    for &v in p {
        if v > 0.0 {
            h -= v * v.ln();
        }
    }
    Ok(h)
}

/// T stochastic forward passes over one sample, one probability row per pass.
#[derive(Debug, Clone)]
pub struct ProbEnsemble {
    probs: Matrix,
}

impl ProbEnsemble {
    /// Validates that every row is a probability vector (sum within `1e-9`).
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.rows() == 0 || probs.cols() == 0 {
            return Err(Error::shape(
                "prob ensemble",
                "at least one pass and one class",
                format!("{}x{}", probs.rows(), probs.cols()),
            ));
        }
        for t in 0..probs.rows() {
            let mut sum = 0.0;
            for &v in probs.row(t) {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::domain(
                        "prob ensemble",
                        format!("pass {t} holds invalid probability {v}"),
                    ));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::domain(
                    "prob ensemble",
                    format!("pass {t} sums to {sum}, not 1"),
                ));
            }
        }
        Ok(Self { probs })
    }

    /// Number of stochastic passes T.
    pub fn passes(&self) -> usize {
        self.probs.rows()
    }

    /// Number of classes C.
    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    /// Probability row for pass `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    /// Mean predictive distribution over passes.
    pub fn mean_probs(&self) -> Vec<f64> {
        let t = self.probs.rows() as f64;
        let mut mean = vec![0.0; self.probs.cols()];
        for r in 0..self.probs.rows() {
            for (m, &v) in mean.iter_mut().zip(self.probs.row(r)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= t;
        }
        mean
    }
}

/// Total/aleatoric/epistemic split in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UncertaintyTriple {
    pub total: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Information-theoretic split of a probability ensemble.
///
/// Total is the entropy of the mean row, aleatoric the mean of per-row
/// entropies, epistemic the difference. The stored total is re-added as
/// `aleatoric + epistemic` so the additivity identity holds bit-exactly; this
/// moves it at most one ulp from the entropy of the mean.
pub fn it_disentangle(ens: &ProbEnsemble) -> Result<UncertaintyTriple> {
    let total_raw = entropy(&ens.mean_probs())?;
    let mut aleatoric = 0.0;
    for t in 0..ens.passes() {
        aleatoric += entropy(ens.row(t))?;
    }
    aleatoric /= ens.passes() as f64;
    let epistemic = total_raw - aleatoric;
    Ok(UncertaintyTriple {
        total: aleatoric + epistemic,
        aleatoric,
        epistemic,
    })
}

/// Per-pass logit means and variances from a mean/variance head, T×C each.
#[derive(Debug, Clone)]
pub struct GaussianLogitSamples {
    mu: Matrix,
    var: Matrix,
}

impl GaussianLogitSamples {
    /// Validates equal shapes and nonnegative variances.
    pub fn new(mu: Matrix, var: Matrix) -> Result<Self> {
        if mu.rows() == 0 || mu.cols() == 0 {
            return Err(Error::shape(
                "logit samples",
                "at least one pass and one class",
                format!("{}x{}", mu.rows(), mu.cols()),
            ));
        }
        if mu.rows() != var.rows() || mu.cols() != var.cols() {
            return Err(Error::shape(
                "logit samples",
                format!("var shaped {}x{}", mu.rows(), mu.cols()),
                format!("{}x{}", var.rows(), var.cols()),
            ));
        }
        for t in 0..var.rows() {
            for &v in var.row(t) {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::domain(
                        "logit samples",
                        format!("pass {t} holds invalid variance {v}"),
                    ));
                }
            }
        }
        Ok(Self { mu, var })
    }

    /// Number of stochastic passes T.
    pub fn passes(&self) -> usize {
        self.mu.rows()
    }

    /// Number of classes C.
    pub fn classes(&self) -> usize {
        self.mu.cols()
    }

    pub fn mu(&self) -> &Matrix {
        &self.mu
    }

    pub fn var(&self) -> &Matrix {
        &self.var
    }
}

/// Moments of a [`GaussianLogitSamples`] stack: mean logits, mean variance,
/// and the spread of the per-pass means.
#[derive(Debug, Clone)]
pub struct GlAggregate {
    mu_bar: Vec<f64>,
    var_ale: Vec<f64>,
    var_epi: Option<Vec<f64>>,
}

impl GlAggregate {
    /// Mean over passes of the logit means.
    pub fn mu_bar(&self) -> &[f64] {
        &self.mu_bar
    }

    /// Mean over passes of the logit variances (aleatoric channel).
    pub fn var_ale(&self) -> &[f64] {
        &self.var_ale
    }

    /// Population variance over passes of the logit means (epistemic
    /// channel); needs at least two passes to be defined.
    pub fn var_epi(&self) -> Result<&[f64]> {
        self.var_epi.as_deref().ok_or(Error::InsufficientSamples {
            context: "epistemic logit variance",
            needed: 2,
            got: 1,
        })
    }
}

/// Reduces per-pass Gaussian logits to their aggregate moments.
pub fn gl_aggregate(samples: &GaussianLogitSamples) -> GlAggregate {
    let t = samples.passes();
    let c = samples.classes();
    let tf = t as f64;
    let mut mu_bar = vec![0.0; c];
    let mut var_ale = vec![0.0; c];
    for r in 0..t {
        for j in 0..c {
            mu_bar[j] += samples.mu.get(r, j);
            var_ale[j] += samples.var.get(r, j);
        }
    }
    for j in 0..c {
        mu_bar[j] /= tf;
        var_ale[j] /= tf;
    }
    let var_epi = if t >= 2 {
        let mut v = vec![0.0; c];
        for r in 0..t {
            for j in 0..c {
                let d = samples.mu.get(r, j) - mu_bar[j];
                v[j] += d * d;
            }
        }
        // Population variance: divide by T, keeping T small still defined.
        for x in &mut v {
            *x /= tf;
        }
        Some(v)
    } else {
        None
    };
    GlAggregate {
        mu_bar,
        var_ale,
        var_epi,
    }
}

/// Mean of `n` softmaxed draws from the diagonal Gaussian `N(mu, var)`.
///
/// All-zero variance short-circuits to `softmax(mu)` exactly for any `n`.
pub fn sampled_softmax(
    mu: &[f64],
    var: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if mu.len() != var.len() {
        return Err(Error::shape(
            "sampled_softmax",
            format!("var of length {}", mu.len()),
            format!("length {}", var.len()),
        ));
    }
    if mu.is_empty() {
        return Err(Error::shape(
            "sampled_softmax",
            "at least one class",
            "empty mu",
        ));
    }
    if n == 0 {
        return Err(Error::domain("sampled_softmax", "need at least one draw"));
    }
    let mut std = vec![0.0; var.len()];
    for (s, &v) in std.iter_mut().zip(var) {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(
                "sampled_softmax",
                format!("negative or non-finite variance {v}"),
            ));
        }
        *s = v.sqrt();
    }
    if var.iter().all(|&v| v == 0.0) {
        return Ok(softmax(mu));
    }
    let mut mean = vec![0.0; mu.len()];
    let mut z = vec![0.0; mu.len()];
    for _ in 0..n {
        for ((zi, &m), &s) in z.iter_mut().zip(mu).zip(&std) {
            let eps: f64 = rng.sample(StandardNormal);
            *zi = m + s * eps;
        }
        for (acc, p) in mean.iter_mut().zip(softmax(&z)) {
            *acc += p;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    Ok(mean)
}

/// Aleatoric and epistemic entropies of a Gaussian-logit stack.
///
/// Both use the same mean logits; aleatoric smears them by the mean variance,
/// epistemic by the spread of the per-pass means. Needs T >= 2 passes. The two
/// Monte-Carlo streams are forked from `rng` so they stay independent.
pub fn gl_uncertainties(
    samples: &GaussianLogitSamples,
    n: usize,
    rng: &mut impl Rng,
) -> Result<(f64, f64)> {
    let agg = gl_aggregate(samples);
    let var_epi = agg.var_epi()?.to_vec();
    let mut au_rng = seed::rng_from(rng.random());
    let mut eu_rng = seed::rng_from(rng.random());
    let au = entropy(&sampled_softmax(agg.mu_bar(), agg.var_ale(), n, &mut au_rng)?)?;
    let eu = entropy(&sampled_softmax(agg.mu_bar(), &var_epi, n, &mut eu_rng)?)?;
    Ok((au, eu))
}

/// Sampled-softmax negative log-likelihood with gradients for one sample.
#[derive(Debug, Clone)]
pub struct GlHeadLossOut {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_var: Vec<f64>,
}

/// Negative log of the label's sampled-softmax probability, with
/// reparameterized gradients for the mean and variance channels.
///
/// Draws are `z = mu + sqrt(var) * eps`, so `d z / d var = eps / (2 sqrt(var))`
/// flows into `grad_var`; classes with exactly zero variance get a zero
/// variance gradient. All-zero variance reduces the loss to the plain
/// cross-entropy of `softmax(mu)` exactly.
pub fn gl_head_loss(
    mu: &[f64],
    var: &[f64],
    label: usize,
    n: usize,
    rng: &mut impl Rng,
) -> Result<GlHeadLossOut> {
    if mu.len() != var.len() {
        return Err(Error::shape(
            "gl_head_loss",
            format!("var of length {}", mu.len()),
            format!("length {}", var.len()),
        ));
    }
    if label >= mu.len() {
        return Err(Error::domain(
            "gl_head_loss",
            format!("label {label} out of range for {} classes", mu.len()),
        ));
    }
    if n == 0 {
        return Err(Error::domain("gl_head_loss", "need at least one draw"));
    }
    let c = mu.len();
    let mut std = vec![0.0; c];
    for (s, &v) in std.iter_mut().zip(var) {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::domain(
                "gl_head_loss",
                format!("negative or non-finite variance {v}"),
            ));
        }
        *s = v.sqrt();
    }

    if var.iter().all(|&v| v == 0.0) {
        let s = softmax(mu);
        let (loss, dldp) = clamped_nll(s[label]);
        let mut grad_mu = vec![0.0; c];
        for j in 0..c {
            let delta = if j == label { 1.0 } else { 0.0 };
            grad_mu[j] = dldp * s[label] * (delta - s[j]);
        }
        return Ok(GlHeadLossOut {
            loss,
            grad_mu,
            grad_var: vec![0.0; c],
        });
    }

    let nf = n as f64;
    let mut p_mean = 0.0;
    // Per-draw accumulators of s_label * (delta - s_j) and the same weighted
    // by eps_j / (2 sqrt(var_j)); the chain rule through the clamped log is
    // applied once at the end.
    let mut dmu_acc = vec![0.0; c];
    let mut dvar_acc = vec![0.0; c];
    let mut z = vec![0.0; c];
    let mut eps = vec![0.0; c];
    for _ in 0..n {
        for j in 0..c {
            let e: f64 = rng.sample(StandardNormal);
            eps[j] = e;
            z[j] = mu[j] + std[j] * e;
        }
        let s = softmax(&z);
        p_mean += s[label];
        for j in 0..c {
            let delta = if j == label { 1.0 } else { 0.0 };
            let dpdz = s[label] * (delta - s[j]);
            dmu_acc[j] += dpdz;
            if std[j] > 0.0 {
                dvar_acc[j] += dpdz * eps[j] / (2.0 * std[j]);
            }
        }
    }
    p_mean /= nf;
    let (loss, dldp) = clamped_nll(p_mean);
    let mut grad_mu = vec![0.0; c];
    let mut grad_var = vec![0.0; c];
    for j in 0..c {
        grad_mu[j] = dldp * dmu_acc[j] / nf;
        grad_var[j] = dldp * dvar_acc[j] / nf;
    }
    Ok(GlHeadLossOut {
        loss,
        grad_mu,
        grad_var,
    })
}

/// Negative log with the probability floored at [`PROB_FLOOR`]; the gradient
/// is zero in the floored regime because the loss is constant there.
fn clamped_nll(p: f64) -> (f64, f64) {
    if p > PROB_FLOOR {
        (-p.ln(), -1.0 / p)
    } else {
        (-PROB_FLOOR.ln(), 0.0)
    }
}
