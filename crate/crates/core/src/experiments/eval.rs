//! Model evaluation: accuracy plus per-sample uncertainty splits, and the
//! feature-space uncertainty rasters.

use crate::bayes::{gaussian_split, Head, StochasticModel};
use crate::disentangle::{
    gl_aggregate, gl_uncertainties, it_disentangle, sampled_softmax, GaussianLogitSamples,
    ProbEnsemble,
};
use crate::nn::{softmax_rows, Matrix};
use crate::{seed, Error, Result};

/// Accuracy and per-sample uncertainties for one model on one test set.
///
/// The estimator follows the model's head: softmax heads get the
/// information-theoretic entropy split, Gaussian-logit heads the
/// mean/variance split with sampled-softmax entropies.
#[derive(Debug, Clone)]
pub struct Evaluation {
    /// Fraction of samples whose predicted class equals the given label.
    pub accuracy: f64,
    pub mean_au: f64,
    pub mean_eu: f64,
    /// Per-sample aleatoric uncertainty, test-set order.
    pub au: Vec<f64>,
    /// Per-sample epistemic uncertainty, test-set order.
    pub eu: Vec<f64>,
    /// Per-sample argmax predictions.
    pub predictions: Vec<usize>,
}

/// Internal per-sample pass over the stochastic outputs.
///
/// Seed layout (stable, callers may replay it): stream `[0]` drives the
/// stochastic passes, `[1, sample]` the Gaussian-logit uncertainty draws,
/// `[2, sample]` the Gaussian-logit predictive draws.
fn per_sample(
    model: &StochasticModel,
    x: &Matrix,
    t: usize,
    n_eval: usize,
    eval_seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let classes = model.class_count();
    let outputs = model.predict_t(x, t, &mut seed::rng(eval_seed, &[0]))?;
    let passes = outputs.len();
    let n = x.rows();
    let mut au = Vec::with_capacity(n);
    let mut eu = Vec::with_capacity(n);
    let mut predictions = Vec::with_capacity(n);
    match model.head {
        Head::Softmax => {
            let probs: Vec<Matrix> = outputs.iter().map(softmax_rows).collect();
            for b in 0..n {
                let flat: Vec<f64> = probs.iter().flat_map(|p| p.row(b).iter().copied()).collect();
                let ens = ProbEnsemble::new(Matrix::from_vec(passes, classes, flat)?)?;
                let mean = ens.mean_probs();
                let triple = it_disentangle(&ens)?;
                au.push(triple.aleatoric);
                eu.push(triple.epistemic);
                predictions.push(argmax(&mean));
            }
        }
        Head::GaussianLogits => {
            let split: Vec<(Matrix, Matrix)> = outputs
                .iter()
                .map(|o| gaussian_split(o, classes))
                .collect::<Result<_>>()?;
            for b in 0..n {
                let mu: Vec<f64> = split.iter().flat_map(|(m, _)| m.row(b).iter().copied()).collect();
                let var: Vec<f64> = split.iter().flat_map(|(_, v)| v.row(b).iter().copied()).collect();
                let samples = GaussianLogitSamples::new(
                    Matrix::from_vec(passes, classes, mu)?,
                    Matrix::from_vec(passes, classes, var)?,
                )?;
                let (a, e) =
                    gl_uncertainties(&samples, n_eval, &mut seed::rng(eval_seed, &[1, b as u64]))?;
                au.push(a);
                eu.push(e);
                // Predictive probabilities smear the mean logits by the total
                // variance (aleatoric plus epistemic spread).
                let agg = gl_aggregate(&samples);
                let total_var: Vec<f64> = agg
                    .var_ale()
                    .iter()
                    .zip(agg.var_epi()?)
                    .map(|(a, e)| a + e)
                    .collect();
                let pred = sampled_softmax(
                    agg.mu_bar(),
                    &total_var,
                    n_eval,
                    &mut seed::rng(eval_seed, &[2, b as u64]),
                )?;
                predictions.push(argmax(&pred));
            }
        }
    }
    Ok((au, eu, predictions))
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs `t` stochastic passes over `x` and scores against `labels`.
///
/// Labels outside the model's class range are allowed and simply count as
/// wrong, which is how out-of-distribution rows are handled upstream.
pub fn evaluate(
    model: &StochasticModel,
    x: &Matrix,
    labels: &[usize],
    t: usize,
    n_eval: usize,
    eval_seed: u64,
) -> Result<Evaluation> {
    if x.rows() != labels.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} labels", x.rows()),
            format!("{}", labels.len()),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::domain("evaluate", "empty test set"));
    }
    let (au, eu, predictions) = per_sample(model, x, t, n_eval, eval_seed)?;
    let n = x.rows() as f64;
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_au: au.iter().sum::<f64>() / n,
        mean_eu: eu.iter().sum::<f64>() / n,
        au,
        eu,
        predictions,
    })
}

/// Axis-aligned evaluation window for [`uncertainty_grid`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl GridBounds {
    /// Bounding box of a point cloud expanded by `margin` times its extent
    /// on each side.
    pub fn around(points: &Matrix, margin: f64) -> Result<Self> {
        if points.cols() != 2 || points.rows() == 0 {
            return Err(Error::shape(
                "GridBounds::around",
                "non-empty Nx2 matrix",
                format!("{}x{}", points.rows(), points.cols()),
            ));
        }
        let mut b = GridBounds {
            x_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_min: f64::INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for i in 0..points.rows() {
            let r = points.row(i);
            b.x_min = b.x_min.min(r[0]);
            b.x_max = b.x_max.max(r[0]);
            b.y_min = b.y_min.min(r[1]);
            b.y_max = b.y_max.max(r[1]);
        }
        let (dx, dy) = (b.x_max - b.x_min, b.y_max - b.y_min);
        b.x_min -= margin * dx;
        b.x_max += margin * dx;
        b.y_min -= margin * dy;
        b.y_max += margin * dy;
        Ok(b)
    }
}

/// Uncertainty evaluated on a regular lattice over a 2-D feature space.
///
/// Raster row 0 corresponds to the minimum y; within a row, column 0 is the
/// minimum x.
#[derive(Debug, Clone)]
pub struct UncertaintyGrid {
    pub bounds: GridBounds,
    pub resolution: usize,
    /// Ascending lattice coordinates, `resolution` each.
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `resolution x resolution` rasters indexed `(y index, x index)`.
    pub au: Matrix,
    pub eu: Matrix,
}

/// Evaluates AU and EU on a `resolution x resolution` lattice.
///
/// Only 2-D input models qualify; anything else is a configuration error.
pub fn uncertainty_grid(
    model: &StochasticModel,
    bounds: GridBounds,
    resolution: usize,
    t: usize,
    n_eval: usize,
    eval_seed: u64,
) -> Result<UncertaintyGrid> {
    if model.nets[0].in_dim() != 2 {
        return Err(Error::Config(format!(
            "uncertainty grids need a 2-D input model, this one takes {} features",
            model.nets[0].in_dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::domain(
            "uncertainty_grid",
            format!("resolution must be at least 2, got {resolution}"),
        ));
    }
    if !(bounds.x_max > bounds.x_min && bounds.y_max > bounds.y_min) {
        return Err(Error::domain(
            "uncertainty_grid",
            "bounds must span a nonempty rectangle",
        ));
    }
    let step = (resolution - 1) as f64;
    let xs: Vec<f64> = (0..resolution)
        .map(|j| bounds.x_min + (bounds.x_max - bounds.x_min) * j as f64 / step)
        .collect();
    let ys: Vec<f64> = (0..resolution)
        .map(|i| bounds.y_min + (bounds.y_max - bounds.y_min) * i as f64 / step)
        .collect();
    let mut flat = Vec::with_capacity(resolution * resolution * 2);
    for &y in &ys {
        for &x in &xs {
            flat.push(x);
            flat.push(y);
        }
    }
    let points = Matrix::from_vec(resolution * resolution, 2, flat)?;
    let (au, eu, _) = per_sample(model, &points, t, n_eval, eval_seed)?;
    Ok(UncertaintyGrid {
        bounds,
        resolution,
        xs,
        ys,
        au: Matrix::from_vec(resolution, resolution, au)?,
        eu: Matrix::from_vec(resolution, resolution, eu)?,
    })
}
