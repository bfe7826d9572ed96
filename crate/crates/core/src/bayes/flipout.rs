//! Variational dense layer with flipout-decorrelated weight perturbations.
//!
//! Each weight and bias carries a Gaussian posterior `N(mean, std^2)` with
//! `std = softplus(rho)`, kept positive by construction. A forward pass draws
//! one shared Gaussian perturbation for the whole batch and decorrelates it
//! across examples with independent random sign vectors, so two rows of the
//! same batch see different effective weights at the cost of one draw.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::nn::{sigmoid, softplus, Activation, Matrix};

/// Scale mixture of two zero-mean Gaussians used as the weight prior.
/// `mixing` is the weight of the second (narrow) component.
#[derive(Debug, Clone, Copy)]
pub struct PriorMixture {
    pub sigma1: f64,
    pub sigma2: f64,
    pub mixing: f64,
}

impl Default for PriorMixture {
    fn default() -> Self {
        PriorMixture {
            sigma1: 5.0,
            sigma2: 2.0,
            mixing: 0.5,
        }
    }
}

fn log_normal(w: f64, sigma: f64) -> f64 {
    let var = sigma * sigma;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - w * w / (2.0 * var)
}

impl PriorMixture {
    /// Log density of the mixture at `w`.
    pub fn log_density(&self, w: f64) -> f64 {
        let a = (1.0 - self.mixing).ln() + log_normal(w, self.sigma1);
        let b = self.mixing.ln() + log_normal(w, self.sigma2);
        let hi = a.max(b);
        if hi == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        hi + ((a - hi).exp() + (b - hi).exp()).ln()
    }

    /// d/dw of the log density.
    fn log_density_grad(&self, w: f64) -> f64 {
        let la = (1.0 - self.mixing).ln() + log_normal(w, self.sigma1);
        let lb = self.mixing.ln() + log_normal(w, self.sigma2);
        let hi = la.max(lb);
        let ea = (la - hi).exp();
        let eb = (lb - hi).exp();
        let r1 = ea / (ea + eb);
        let r2 = eb / (ea + eb);
        -w * (r1 / (self.sigma1 * self.sigma1) + r2 / (self.sigma2 * self.sigma2))
    }
}

/// Noise realization for one flipout forward pass.
#[derive(Debug, Clone)]
pub struct FlipoutNoise {
    /// Shared `out x in` standard-normal draw for the weight perturbation.
    pub eps_w: Matrix,
    /// Per-example input sign vectors (`batch x in`, entries +-1).
    pub sign_in: Matrix,
    /// Per-example output sign vectors (`batch x out`, entries +-1).
    pub sign_out: Matrix,
    /// Shared standard-normal draw for the bias (one per output unit).
    pub eps_b: Vec<f64>,
}

/// Gradients of one flipout layer, mirrored on its four parameter tensors.
#[derive(Debug, Clone)]
pub struct FlipoutGrads {
    pub w_mean: Matrix,
    pub w_rho: Matrix,
    pub b_mean: Vec<f64>,
    pub b_rho: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FlipoutLayer {
    pub w_mean: Matrix,
    pub w_rho: Matrix,
    pub b_mean: Vec<f64>,
    pub b_rho: Vec<f64>,
    pub activation: Activation,
    pub prior: PriorMixture,
}

/// Initial rho; softplus(-3) gives a posterior std near 0.05, small against
/// the prior scales so early training is dominated by the data term.
const RHO_INIT: f64 = -3.0;

impl FlipoutLayer {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let std = match activation {
            Activation::Relu => (2.0 / in_dim as f64).sqrt(),
            Activation::Linear => (2.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        FlipoutLayer {
            w_mean: Matrix::from_fn(out_dim, in_dim, |_, _| {
                std * rng.sample::<f64, _>(StandardNormal)
            }),
            w_rho: Matrix::from_fn(out_dim, in_dim, |_, _| RHO_INIT),
            b_mean: vec![0.0; out_dim],
            b_rho: vec![RHO_INIT; out_dim],
            activation,
            prior: PriorMixture::default(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_mean.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_mean.rows()
    }

    pub fn sample_noise(&self, batch_rows: usize, rng: &mut impl Rng) -> FlipoutNoise {
        let (out_dim, in_dim) = (self.out_dim(), self.in_dim());
        FlipoutNoise {
            eps_w: Matrix::from_fn(out_dim, in_dim, |_, _| rng.sample::<f64, _>(StandardNormal)),
            sign_in: Matrix::from_fn(batch_rows, in_dim, |_, _| {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }),
            sign_out: Matrix::from_fn(batch_rows, out_dim, |_, _| {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }),
            eps_b: (0..out_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    /// One stochastic forward pass; returns pre-activations and outputs.
    ///
    /// Row `b`: `y_b = W_mean x_b + r_b o ((std o eps_w)(x_b o s_b)) + bias`,
    /// with the bias drawn once per pass from its posterior.
    pub fn forward(&self, x: &Matrix, noise: &FlipoutNoise) -> (Matrix, Matrix) {
        let (b, out_dim, in_dim) = (x.rows(), self.out_dim(), self.in_dim());
        debug_assert_eq!(x.cols(), in_dim);
        let mut pre = Matrix::zeros(b, out_dim);
        for r in 0..b {
            let xr = x.row(r);
            let s_in = noise.sign_in.row(r);
            let s_out = noise.sign_out.row(r);
            let pr = pre.row_mut(r);
            for o in 0..out_dim {
                let wm = self.w_mean.row(o);
                let wr = self.w_rho.row(o);
                let er = noise.eps_w.row(o);
                let mut mean_acc = 0.0;
                let mut pert_acc = 0.0;
                for i in 0..in_dim {
                    mean_acc += wm[i] * xr[i];
                    pert_acc += softplus(wr[i]) * er[i] * xr[i] * s_in[i];
                }
                let bias = self.b_mean[o] + softplus(self.b_rho[o]) * noise.eps_b[o];
                pr[o] = mean_acc + s_out[o] * pert_acc + bias;
            }
        }
        let post = pre.map(|z| self.activation.apply(z));
        (pre, post)
    }

    /// Reverse pass for the same noise realization.
    pub fn backward(
        &self,
        x: &Matrix,
        pre: &Matrix,
        dpost: &Matrix,
        noise: &FlipoutNoise,
    ) -> (FlipoutGrads, Matrix) {
        let (b, out_dim, in_dim) = (x.rows(), self.out_dim(), self.in_dim());
        let mut dw_mean = Matrix::zeros(out_dim, in_dim);
        let mut dw_rho = Matrix::zeros(out_dim, in_dim);
        let mut db_mean = vec![0.0; out_dim];
        let mut db_rho = vec![0.0; out_dim];
        let mut dx = Matrix::zeros(b, in_dim);

        for r in 0..b {
            let xr = x.row(r);
            let s_in = noise.sign_in.row(r);
            let s_out = noise.sign_out.row(r);
            for o in 0..out_dim {
                let dpre = dpost.get(r, o) * self.activation.grad(pre.get(r, o));
                if dpre == 0.0 {
                    continue;
                }
                db_mean[o] += dpre;
                db_rho[o] += dpre * noise.eps_b[o] * sigmoid(self.b_rho[o]);
                let wm = self.w_mean.row(o);
                let wr = self.w_rho.row(o);
                let er = noise.eps_w.row(o);
                let dwm = dw_mean.row_mut(o);
                let dwr = dw_rho.row_mut(o);
                let signed = dpre * s_out[o];
                for i in 0..in_dim {
                    dwm[i] += dpre * xr[i];
                    // Chain through std = softplus(rho) and the sign trick.
                    dwr[i] += signed * er[i] * xr[i] * s_in[i] * sigmoid(wr[i]);
                }
                let dxr = dx.row_mut(r);
                for i in 0..in_dim {
                    dxr[i] += dpre * wm[i] + signed * softplus(wr[i]) * er[i] * s_in[i];
                }
            }
        }
        (
            FlipoutGrads {
                w_mean: dw_mean,
                w_rho: dw_rho,
                b_mean: db_mean,
                b_rho: db_rho,
            },
            dx,
        )
    }

}

/// Monte-Carlo estimate of `KL(q || prior)` over the layer's weights and
/// biases, with reparameterized gradients for the mean and rho tensors.
///
/// Per draw and parameter, the integrand is `log q(w) - log p(w)` at
/// `w = mean + std * eps`; the entropy part reduces to `-ln std + const`.
pub fn flipout_kl_with_grads(
    layer: &FlipoutLayer,
    draws: usize,
    rng: &mut impl Rng,
) -> (f64, FlipoutGrads) {
    assert!(draws > 0, "flipout_kl needs at least one draw");
    let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
    let mut total = 0.0;
    let mut grads = FlipoutGrads {
        w_mean: Matrix::zeros(out_dim, in_dim),
        w_rho: Matrix::zeros(out_dim, in_dim),
        b_mean: vec![0.0; out_dim],
        b_rho: vec![0.0; out_dim],
    };
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let scale = 1.0 / draws as f64;
    for _ in 0..draws {
        let visit = |mean: f64, rho: f64, rng: &mut dyn FnMut() -> f64| -> (f64, f64, f64) {
            let std = softplus(rho);
            let eps = rng();
            let w = mean + std * eps;
            let log_q = -std.ln() - half_ln_2pi - 0.5 * eps * eps;
            let log_p = layer.prior.log_density(w);
            let dlogp = layer.prior.log_density_grad(w);
            let dmean = -dlogp;
            let drho = (-1.0 / std - dlogp * eps) * sigmoid(rho);
            (log_q - log_p, dmean, drho)
        };
        for o in 0..out_dim {
            for i in 0..in_dim {
                let mut draw = || rng.sample::<f64, _>(StandardNormal);
                let (v, dm, dr) = visit(layer.w_mean.get(o, i), layer.w_rho.get(o, i), &mut draw);
                total += v * scale;
                grads.w_mean.set(o, i, grads.w_mean.get(o, i) + dm * scale);
                grads.w_rho.set(o, i, grads.w_rho.get(o, i) + dr * scale);
            }
            let mut draw = || rng.sample::<f64, _>(StandardNormal);
            let (v, dm, dr) = visit(layer.b_mean[o], layer.b_rho[o], &mut draw);
            total += v * scale;
            grads.b_mean[o] += dm * scale;
            grads.b_rho[o] += dr * scale;
        }
    }
    (total, grads)
}

/// KL estimate alone; see [`flipout_kl_with_grads`].
pub fn flipout_kl(layer: &FlipoutLayer, draws: usize, rng: &mut impl Rng) -> f64 {
    flipout_kl_with_grads(layer, draws, rng).0
}
