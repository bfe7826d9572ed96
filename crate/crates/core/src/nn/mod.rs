//! Deterministic dense network engine: matrix type, MLP forward pass,
//! softmax cross-entropy loss, reverse-mode gradients, and Adam.
//!
//! The stochastic wrappers in [`crate::bayes`] reuse the layer primitives
//! here; this module on its own covers plain (noise-free) training.

mod adam;
mod layer;
mod matrix;

pub use adam::{AdamConfig, AdamState};
pub use layer::{Activation, DenseGrads, DenseLayer};
pub use matrix::Matrix;

use rand::Rng;

use crate::{Error, Result};

/// Probabilities below this are clamped before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Logistic function, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one logit row (shifted by the max).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let p = softmax(logits.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    out
}

/// Mean negative log-likelihood of the labels under `probs` (rows summing
/// to one). Probabilities are clamped to [`PROB_FLOOR`] before the log.
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::shape(
            "cross_entropy",
            format!("{} label rows", probs.rows()),
            format!("{}", labels.len()),
        ));
    }
    if probs.rows() == 0 {
        return Err(Error::domain("cross_entropy", "empty batch".to_string()));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= probs.cols() {
            return Err(Error::domain(
                "cross_entropy",
                format!("label {label} out of range for {} classes", probs.cols()),
            ));
        }
        total += -probs.get(r, label).max(PROB_FLOOR).ln();
    }
    Ok(total / probs.rows() as f64)
}

/// Training loop knobs shared by the plain and stochastic trainers.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Plain feed-forward classifier: dense stack, ReLU hidden layers, linear
/// output layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub class_count: usize,
}

impl Mlp {
    /// Builds the stack from the full dimension chain `[in, h1, ..., out]`.
    /// The final entry doubles as the class count.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        Self::with_output(dims, *dims.last().unwrap_or(&0), rng)
    }

    /// Same as [`Self::new`] but with an output width decoupled from the
    /// class count (the Gaussian-logits head emits `2 * classes` values).
    pub fn with_output(dims: &[usize], class_count: usize, rng: &mut impl Rng) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) || class_count == 0 {
            return Err(Error::domain(
                "Mlp::new",
                format!("invalid dimension chain {dims:?}"),
            ));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Linear
                } else {
                    Activation::Relu
                };
                DenseLayer::new(w[0], w[1], act, rng)
            })
            .collect();
        Ok(Mlp {
            layers,
            class_count,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    /// Deterministic forward pass; returns raw output-layer values (logits).
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.in_dim() {
            return Err(Error::shape(
                "Mlp::forward",
                format!("{} feature columns", self.in_dim()),
                format!("{}", batch.cols()),
            ));
        }
        let mut current = batch.clone();
        for layer in &self.layers {
            let (_, post) = layer.forward(&current, None)?;
            current = post;
        }
        Ok(current)
    }

    /// Sizes of the flat parameter blocks, in optimizer order
    /// (per layer: weights then bias).
    pub fn block_sizes(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.rows() * l.weights.cols(), l.bias.len()])
            .collect()
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            blocks.push(layer.weights.as_mut_slice());
            blocks.push(layer.bias.as_mut_slice());
        }
        blocks
    }
}

/// Extra loss term with precomputed gradients (one `Vec` per parameter
/// block), added on top of the data term in [`backward_step`].
#[derive(Debug, Clone)]
pub struct ExtraPenalty {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// One optimizer step on a batch: forward, softmax cross-entropy, reverse
/// pass, Adam update. Returns the batch loss (data term plus penalty).
pub fn backward_step(
    mlp: &mut Mlp,
    batch: &Matrix,
    labels: &[usize],
    adam: &mut AdamState,
    extra: Option<&ExtraPenalty>,
) -> Result<f64> {
    if batch.rows() != labels.len() {
        return Err(Error::shape(
            "backward_step",
            format!("{} labels", batch.rows()),
            format!("{}", labels.len()),
        ));
    }
    // Forward with per-layer traces.
    let mut inputs: Vec<Matrix> = Vec::with_capacity(mlp.layers.len());
    let mut pres: Vec<Matrix> = Vec::with_capacity(mlp.layers.len());
    let mut current = batch.clone();
    for layer in &mlp.layers {
        let (pre, post) = layer.forward(&current, None)?;
        inputs.push(current);
        pres.push(pre);
        current = post;
    }
    let probs = softmax_rows(&current);
    let mut loss = cross_entropy(&probs, labels)?;

    // d(mean CE)/d(logits) = (softmax - onehot) / batch.
    let b = batch.rows() as f64;
    let mut delta = probs;
    for (r, &label) in labels.iter().enumerate() {
        let row = delta.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= b;
        }
    }

    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); mlp.layers.len() * 2];
    for (idx, layer) in mlp.layers.iter().enumerate().rev() {
        let (layer_grads, dx) = layer.backward(&inputs[idx], &pres[idx], &delta, None);
        grads[2 * idx] = layer_grads.weights.as_slice().to_vec();
        grads[2 * idx + 1] = layer_grads.bias;
        delta = dx;
    }

    if let Some(penalty) = extra {
        if penalty.grads.len() != grads.len() {
            return Err(Error::shape(
                "backward_step",
                format!("{} penalty blocks", grads.len()),
                format!("{}", penalty.grads.len()),
            ));
        }
        loss += penalty.value;
        for (g, pg) in grads.iter_mut().zip(&penalty.grads) {
            for (a, b) in g.iter_mut().zip(pg) {
                *a += b;
            }
        }
    }

    for (idx, g) in grads.iter().enumerate() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training {
                layer: idx / 2,
                detail: "non-finite gradient".to_string(),
            });
        }
    }

    adam.step(&mut mlp.param_blocks_mut(), &grads)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn zero_mlp(dims: &[usize]) -> Mlp {
        let mut rng = seed::rng_from(0);
        let mut mlp = Mlp::new(dims, &mut rng).unwrap();
        for layer in &mut mlp.layers {
            layer.weights = layer.weights.map(|_| 0.0);
        }
        mlp
    }

    #[test]
    fn forward_zero_weights_zero_bias_gives_zero_logits() {
        let mlp = zero_mlp(&[3, 4, 2]);
        let x = Matrix::from_vec(2, 3, vec![1.0, -2.0, 0.5, 3.0, 3.0, 3.0]).unwrap();
        let logits = mlp.forward(&x).unwrap();
        assert!(logits.iter().all(|v| v == 0.0));
    }

    #[test]
    fn forward_identity_linear_layer_reproduces_input() {
        let mut mlp = zero_mlp(&[2, 2]);
        mlp.layers[0].weights = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![0.3, -1.7]).unwrap();
        let y = mlp.forward(&x).unwrap();
        assert_eq!(y.as_slice(), x.as_slice());
    }

    #[test]
    fn forward_hand_computed_two_layer_net() {
        // Layer 1 (ReLU): W=[[1,-1],[2,0]], b=[0, -1]
        // Layer 2 (linear): W=[[1,1],[0,3]], b=[0.5, 0]
        let mut mlp = zero_mlp(&[2, 2, 2]);
        mlp.layers[0].weights = Matrix::from_vec(2, 2, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
        mlp.layers[0].bias = vec![0.0, -1.0];
        mlp.layers[1].weights = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 3.0]).unwrap();
        mlp.layers[1].bias = vec![0.5, 0.0];
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        // Hidden pre = [1-2, 2-1] = [-1, 1]; relu = [0, 1].
        // Out = [0*1 + 1*1 + 0.5, 0*0 + 1*3] = [1.5, 3].
        let y = mlp.forward(&x).unwrap();
        assert!((y.get(0, 0) - 1.5).abs() < 1e-15);
        assert!((y.get(0, 1) - 3.0).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mlp = zero_mlp(&[3, 2]);
        assert!(mlp.forward(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let p = softmax(&[0.0, 0.0]);
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        // Reference values computed with 40-digit arithmetic.
        let p = softmax(&[1.0, 2.0, 3.0]);
        let expected = [
            0.090030573170380457998,
            0.24472847105479765247,
            0.66524095577482188953,
        ];
        for (a, e) in p.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn cross_entropy_zero_for_perfect_onehot() {
        let probs = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let ce = cross_entropy(&probs, &[0, 1]).unwrap();
        assert!(ce.abs() < 1e-10);
    }

    #[test]
    fn cross_entropy_ln2_for_uniform_binary() {
        let probs = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let ce = cross_entropy(&probs, &[0]).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_mixed_batch_matches_scalar_oracle() {
        let probs = Matrix::from_vec(2, 2, vec![0.9, 0.1, 0.2, 0.8]).unwrap();
        let ce = cross_entropy(&probs, &[0, 1]).unwrap();
        assert!((ce - 0.1642520334860180285).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let probs = Matrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(cross_entropy(&probs, &[2]).is_err());
    }

    #[test]
    fn backward_step_with_zero_learning_rate_keeps_params() {
        let mut rng = seed::rng_from(3);
        let mut mlp = Mlp::new(&[2, 4, 2], &mut rng).unwrap();
        let before = mlp.clone();
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(0.0), &mlp.block_sizes());
        let x = Matrix::from_vec(2, 2, vec![0.1, 0.2, -0.4, 1.0]).unwrap();
        backward_step(&mut mlp, &x, &[0, 1], &mut adam, None).unwrap();
        for (a, b) in mlp.layers.iter().zip(&before.layers) {
            assert_eq!(a.weights.as_slice(), b.weights.as_slice());
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn backward_step_matches_hand_applied_adam_update() {
        // 1-input, 2-logit linear net from zero weights. The CE gradient is
        // analytic: softmax = [.5,.5], dlogits = [-.5,.5], dw = dlogits * x
        // = [-1, 1]. Adam's bias-corrected first step then moves each weight
        // by lr * g/(|g| + eps).
        let mut mlp = zero_mlp(&[1, 2]);
        let mut adam = AdamState::new(AdamConfig::default(), &mlp.block_sizes());
        let x = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let loss = backward_step(&mut mlp, &x, &[0], &mut adam, None).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let w = mlp.layers[0].weights.as_slice();
        assert!((w[0] - 1e-3).abs() < 1e-9, "w0 = {}", w[0]);
        assert!((w[1] + 1e-3).abs() < 1e-9, "w1 = {}", w[1]);
    }

    #[test]
    fn extra_penalty_adds_to_loss_and_gradients() {
        let mut mlp = zero_mlp(&[1, 2]);
        let sizes = mlp.block_sizes();
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(0.0), &sizes);
        let x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let base = backward_step(&mut mlp, &x, &[0], &mut adam, None).unwrap();
        let penalty = ExtraPenalty {
            value: 0.75,
            grads: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        };
        let with = backward_step(&mut mlp, &x, &[0], &mut adam, Some(&penalty)).unwrap();
        assert!((with - base - 0.75).abs() < 1e-12);
    }

    #[test]
    fn training_separable_data_reaches_full_accuracy() {
        // Two linearly separable clusters; 500 epochs of full-batch steps.
        let mut rng = seed::rng_from(4);
        let mut mlp = Mlp::new(&[2, 8, 2], &mut rng).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &mlp.block_sizes());
        let mut xs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            let t = i as f64 / 19.0;
            xs.extend([t, 2.0 + t]);
            labels.push(0);
            xs.extend([t + 0.3, -2.0 - t]);
            labels.push(1);
        }
        let x = Matrix::from_vec(40, 2, xs).unwrap();
        for _ in 0..500 {
            backward_step(&mut mlp, &x, &labels, &mut adam, None).unwrap();
        }
        let probs = softmax_rows(&mlp.forward(&x).unwrap());
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(r, &label)| {
                let row = probs.row(r);
                let argmax = if row[0] > row[1] { 0 } else { 1 };
                argmax == label
            })
            .count();
        assert_eq!(correct, 40);
    }

    #[test]
    fn identical_seeds_give_identical_training_trajectories() {
        let run = || {
            let mut rng = seed::rng_from(9);
            let mut mlp = Mlp::new(&[2, 4, 2], &mut rng).unwrap();
            let mut adam = AdamState::new(AdamConfig::default(), &mlp.block_sizes());
            let x = Matrix::from_vec(4, 2, vec![0.0, 1.0, 1.0, 0.0, -1.0, 0.3, 0.2, -0.8]).unwrap();
            let mut losses = Vec::new();
            for _ in 0..20 {
                losses.push(backward_step(&mut mlp, &x, &[0, 1, 0, 1], &mut adam, None).unwrap());
            }
            (losses, mlp.layers[0].weights.as_slice().to_vec())
        };
        let (l1, w1) = run();
        let (l2, w2) = run();
        assert_eq!(l1, l2);
        assert_eq!(w1, w2);
    }
}
