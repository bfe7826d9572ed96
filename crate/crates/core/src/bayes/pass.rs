//! Single-pass machinery shared by training and MC prediction: sampling a
//! noise realization, running it forward (optionally with traces), and
//! backpropagating through the same realization.

use rand::Rng;

use super::flipout::FlipoutNoise;
use super::{Head, NetLayer, StochasticNet};
use crate::disentangle::gl_head_loss;
use crate::nn::{cross_entropy, sigmoid, softmax_rows, softplus, Matrix};
use crate::{seed, Error, Result};

/// Additive floor on the Gaussian-logits variance channel.
pub const VAR_FLOOR: f64 = 1e-6;

/// One realization of every noise source a forward pass consumes.
/// Layers without a mask carry `None`; a fully deterministic pass is all
/// `None`s.
#[derive(Debug, Clone)]
pub struct PassNoise {
    pub act_masks: Vec<Option<Matrix>>,
    pub weight_masks: Vec<Option<Matrix>>,
    pub flipout: Vec<Option<FlipoutNoise>>,
}

impl PassNoise {
    pub fn none(layer_count: usize) -> Self {
        PassNoise {
            act_masks: vec![None; layer_count],
            weight_masks: vec![None; layer_count],
            flipout: vec![None; layer_count],
        }
    }
}

/// Bernoulli keep-mask with inverted scaling: entries are `0` with
/// probability `rate` and `1/(1-rate)` otherwise.
fn inverted_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Matrix {
    let keep_scale = 1.0 / (1.0 - rate);
    Matrix::from_fn(rows, cols, |_, _| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep_scale
        }
    })
}

/// Noise sites for one network; which of these apply is the variant's call.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoiseSpec<'a> {
    /// Layers whose activations get node dropout.
    pub dropout: &'a [usize],
    /// Layers whose weight matrices get dropconnect.
    pub dropconnect: &'a [usize],
    pub rate: f64,
}

/// Draws a fresh noise realization. Draw order is fixed (layer by layer,
/// weights before activations) so a seeded stream replays identically.
pub fn sample_pass_noise(
    net: &StochasticNet,
    spec: NoiseSpec<'_>,
    batch_rows: usize,
    rng: &mut impl Rng,
) -> PassNoise {
    let mut noise = PassNoise::none(net.layers.len());
    for (idx, layer) in net.layers.iter().enumerate() {
        match layer {
            NetLayer::Flipout(fl) => {
                noise.flipout[idx] = Some(fl.sample_noise(batch_rows, rng));
            }
            NetLayer::Dense(dense) => {
                if spec.rate > 0.0 && spec.dropconnect.contains(&idx) {
                    noise.weight_masks[idx] =
                        Some(inverted_mask(dense.out_dim(), dense.in_dim(), spec.rate, rng));
                }
            }
        }
        if spec.rate > 0.0 && spec.dropout.contains(&idx) {
            noise.act_masks[idx] = Some(inverted_mask(batch_rows, layer.out_dim(), spec.rate, rng));
        }
    }
    noise
}

/// Layer traces needed by the backward pass.
#[derive(Debug)]
pub struct Trace {
    inputs: Vec<Matrix>,
    pres: Vec<Matrix>,
    /// Raw output of the final layer (logits or Gaussian-logit channels).
    pub out: Matrix,
}

fn apply_act_mask(post: &mut Matrix, mask: &Matrix) {
    let data = post.as_mut_slice();
    for (v, m) in data.iter_mut().zip(mask.as_slice()) {
        *v *= m;
    }
}

/// Forward pass under a fixed noise realization, without traces.
pub fn forward_noisy(net: &StochasticNet, batch: &Matrix, noise: &PassNoise) -> Result<Matrix> {
    run_forward(net, batch, noise, false).map(|t| t.out)
}

/// Forward pass that keeps per-layer traces for [`backward_pass`].
pub fn forward_traced(net: &StochasticNet, batch: &Matrix, noise: &PassNoise) -> Result<Trace> {
    run_forward(net, batch, noise, true)
}

fn run_forward(
    net: &StochasticNet,
    batch: &Matrix,
    noise: &PassNoise,
    keep_traces: bool,
) -> Result<Trace> {
    if noise.act_masks.len() != net.layers.len() {
        return Err(Error::shape(
            "forward_noisy",
            format!("{} noise slots", net.layers.len()),
            format!("{}", noise.act_masks.len()),
        ));
    }
    let mut inputs = Vec::new();
    let mut pres = Vec::new();
    let mut current = batch.clone();
    for (idx, layer) in net.layers.iter().enumerate() {
        let (pre, mut post) = match layer {
            NetLayer::Dense(dense) => dense.forward(&current, noise.weight_masks[idx].as_ref())?,
            NetLayer::Flipout(fl) => {
                if current.cols() != fl.in_dim() {
                    return Err(Error::shape(
                        "FlipoutLayer::forward",
                        format!("{} input columns", fl.in_dim()),
                        format!("{}", current.cols()),
                    ));
                }
                let fl_noise = noise.flipout[idx].as_ref().ok_or_else(|| {
                    Error::State(format!("missing flipout noise for layer {idx}"))
                })?;
                fl.forward(&current, fl_noise)
            }
        };
        if let Some(mask) = &noise.act_masks[idx] {
            apply_act_mask(&mut post, mask);
        }
        if keep_traces {
            inputs.push(current);
            pres.push(pre);
        }
        current = post;
    }
    Ok(Trace {
        inputs,
        pres,
        out: current,
    })
}

/// Backpropagates `dout` (gradient w.r.t. the raw final output) through the
/// traced pass. Returns one flat gradient vector per parameter block, in the
/// same order as [`StochasticNet::param_blocks_mut`].
pub fn backward_pass(
    net: &StochasticNet,
    trace: &Trace,
    noise: &PassNoise,
    dout: Matrix,
) -> Vec<Vec<f64>> {
    let mut grads: Vec<Vec<f64>> = vec![Vec::new(); net.block_count()];
    let mut delta = dout;
    let mut block_end = net.block_count();
    for (idx, layer) in net.layers.iter().enumerate().rev() {
        if let Some(mask) = &noise.act_masks[idx] {
            let d = delta.as_mut_slice();
            for (v, m) in d.iter_mut().zip(mask.as_slice()) {
                *v *= m;
            }
        }
        match layer {
            NetLayer::Dense(dense) => {
                let (g, dx) = dense.backward(
                    &trace.inputs[idx],
                    &trace.pres[idx],
                    &delta,
                    noise.weight_masks[idx].as_ref(),
                );
                block_end -= 2;
                grads[block_end] = g.weights.as_slice().to_vec();
                grads[block_end + 1] = g.bias;
                delta = dx;
            }
            NetLayer::Flipout(fl) => {
                let fl_noise = noise.flipout[idx]
                    .as_ref()
                    .expect("trace produced without flipout noise");
                let (g, dx) = fl.backward(&trace.inputs[idx], &trace.pres[idx], &delta, fl_noise);
                block_end -= 4;
                grads[block_end] = g.w_mean.as_slice().to_vec();
                grads[block_end + 1] = g.w_rho.as_slice().to_vec();
                grads[block_end + 2] = g.b_mean;
                grads[block_end + 3] = g.b_rho;
                delta = dx;
            }
        }
    }
    grads
}

/// Splits a raw Gaussian-logits head output into per-class means and
/// variances; the variance channel goes through softplus plus [`VAR_FLOOR`].
pub fn gaussian_split(raw: &Matrix, class_count: usize) -> Result<(Matrix, Matrix)> {
    if raw.cols() != 2 * class_count {
        return Err(Error::shape(
            "gaussian_split",
            format!("{} output columns", 2 * class_count),
            format!("{}", raw.cols()),
        ));
    }
    let mu = Matrix::from_fn(raw.rows(), class_count, |r, c| raw.get(r, c));
    let var = Matrix::from_fn(raw.rows(), class_count, |r, c| {
        softplus(raw.get(r, class_count + c)) + VAR_FLOOR
    });
    Ok((mu, var))
}

/// Configuration of the sampled-softmax likelihood used to train the
/// Gaussian-logits head.
#[derive(Debug, Clone, Copy)]
pub struct GlLossConfig {
    /// Monte-Carlo draws per example in the training loss.
    pub draws: usize,
    /// Seed for the per-example draw streams; fixed seed means the loss is a
    /// deterministic function of the parameters, which finite-difference
    /// checks rely on.
    pub seed: u64,
}

/// Batch loss and parameter gradients for one noise realization.
#[derive(Debug)]
pub struct LossGrads {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Computes the head loss and backpropagates it through the fixed noise
/// realization. Softmax heads use cross-entropy; Gaussian-logit heads use
/// the reparameterized sampled-softmax likelihood.
pub fn loss_and_grads(
    net: &StochasticNet,
    head: Head,
    batch: &Matrix,
    labels: &[usize],
    noise: &PassNoise,
    gl: GlLossConfig,
) -> Result<LossGrads> {
    if batch.rows() != labels.len() {
        return Err(Error::shape(
            "loss_and_grads",
            format!("{} labels", batch.rows()),
            format!("{}", labels.len()),
        ));
    }
    let trace = forward_traced(net, batch, noise)?;
    let b = batch.rows() as f64;
    let classes = net.class_count;
    let (loss, dout) = match head {
        Head::Softmax => {
            let probs = softmax_rows(&trace.out);
            let loss = cross_entropy(&probs, labels)?;
            let mut delta = probs;
            for (r, &label) in labels.iter().enumerate() {
                let row = delta.row_mut(r);
                row[label] -= 1.0;
                for v in row.iter_mut() {
                    *v /= b;
                }
            }
            (loss, delta)
        }
        Head::GaussianLogits => {
            let (mu, var) = gaussian_split(&trace.out, classes)?;
            let mut delta = Matrix::zeros(trace.out.rows(), trace.out.cols());
            let mut total = 0.0;
            for (r, &label) in labels.iter().enumerate() {
                let mut row_rng = seed::rng(gl.seed, &[r as u64]);
                let out = gl_head_loss(mu.row(r), var.row(r), label, gl.draws, &mut row_rng)?;
                total += out.loss / b;
                let drow = delta.row_mut(r);
                for c in 0..classes {
                    drow[c] = out.grad_mu[c] / b;
                    // Chain d(var)/d(raw) = sigmoid(raw) from the softplus.
                    drow[classes + c] =
                        out.grad_var[c] * sigmoid(trace.out.get(r, classes + c)) / b;
                }
            }
            (total, delta)
        }
    };
    let grads = backward_pass(net, &trace, noise, dout);
    Ok(LossGrads { loss, grads })
}
