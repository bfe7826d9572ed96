//! Fully connected layer with the forward/backward primitives the rest of
//! the engine composes.

use rand::Rng;
use rand_distr::StandardNormal;

use super::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative as a function of the pre-activation.
    #[inline]
    pub fn grad(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Weight/bias gradients of a single dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// `y = act(x W^T + b)` with weights stored `out_dim x in_dim`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Fresh layer with He initialization for ReLU (std `sqrt(2/fan_in)`)
    /// and Xavier for linear (std `sqrt(2/(fan_in+fan_out))`); zero biases.
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let std = match activation {
            Activation::Relu => (2.0 / in_dim as f64).sqrt(),
            Activation::Linear => (2.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let weights = Matrix::from_fn(out_dim, in_dim, |_, _| {
            std * rng.sample::<f64, _>(StandardNormal)
        });
        DenseLayer {
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn check_input(&self, x: &Matrix, context: &'static str) -> Result<()> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(
                context,
                format!("{} input columns", self.in_dim()),
                format!("{}", x.cols()),
            ));
        }
        Ok(())
    }

    /// Forward pass over a batch (rows of `x`). `weight_mask`, when present,
    /// multiplies each weight elementwise before use; the DropConnect path
    /// supplies masks of `0` and `1/(1-p)`.
    ///
    /// Returns the pre-activations and the activated outputs; the backward
    /// pass needs the former.
    pub fn forward(&self, x: &Matrix, weight_mask: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
        self.check_input(x, "DenseLayer::forward")?;
        let (b, out_dim, in_dim) = (x.rows(), self.out_dim(), self.in_dim());
        let mut pre = Matrix::zeros(b, out_dim);
        for r in 0..b {
            let xr = x.row(r);
            let pr = pre.row_mut(r);
            for o in 0..out_dim {
                let wr = self.weights.row(o);
                let mut acc = self.bias[o];
                match weight_mask {
                    None => {
                        for i in 0..in_dim {
                            acc += wr[i] * xr[i];
                        }
                    }
                    Some(mask) => {
                        let mr = mask.row(o);
                        for i in 0..in_dim {
                            acc += wr[i] * mr[i] * xr[i];
                        }
                    }
                }
                pr[o] = acc;
            }
        }
        let post = pre.map(|z| self.activation.apply(z));
        Ok((pre, post))
    }

    /// Backward pass. `x` and `pre` come from the matching [`Self::forward`]
    /// call, `dpost` is the loss gradient w.r.t. the activated output.
    /// Returns the parameter gradients and the gradient w.r.t. `x`.
    pub fn backward(
        &self,
        x: &Matrix,
        pre: &Matrix,
        dpost: &Matrix,
        weight_mask: Option<&Matrix>,
    ) -> (DenseGrads, Matrix) {
        let (b, out_dim, in_dim) = (x.rows(), self.out_dim(), self.in_dim());
        debug_assert_eq!(dpost.rows(), b);
        debug_assert_eq!(dpost.cols(), out_dim);

        let mut dw = Matrix::zeros(out_dim, in_dim);
        let mut db = vec![0.0; out_dim];
        let mut dx = Matrix::zeros(b, in_dim);

        for r in 0..b {
            let xr = x.row(r);
            for o in 0..out_dim {
                let dpre = dpost.get(r, o) * self.activation.grad(pre.get(r, o));
                if dpre == 0.0 {
                    continue;
                }
                db[o] += dpre;
                let wr = self.weights.row(o);
                let dwr = dw.row_mut(o);
                let dxr = dx.row_mut(r);
                match weight_mask {
                    None => {
                        for i in 0..in_dim {
                            dwr[i] += dpre * xr[i];
                            dxr[i] += dpre * wr[i];
                        }
                    }
                    Some(mask) => {
                        // Effective weight is w*m, so both gradients carry m.
                        let mr = mask.row(o);
                        for i in 0..in_dim {
                            dwr[i] += dpre * xr[i] * mr[i];
                            dxr[i] += dpre * wr[i] * mr[i];
                        }
                    }
                }
            }
        }
        (DenseGrads { weights: dw, bias: db }, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn relu_clips_negative_preactivations() {
        let layer = DenseLayer {
            weights: Matrix::from_vec(1, 1, vec![1.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Relu,
        };
        let x = Matrix::from_vec(2, 1, vec![-3.0, 2.0]).unwrap();
        let (pre, post) = layer.forward(&x, None).unwrap();
        assert_eq!(pre.as_slice(), &[-3.0, 2.0]);
        assert_eq!(post.as_slice(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let mut rng = seed::rng_from(1);
        let layer = DenseLayer::new(3, 2, Activation::Linear, &mut rng);
        let x = Matrix::zeros(4, 2);
        assert!(layer.forward(&x, None).is_err());
    }

    #[test]
    fn he_init_scale_tracks_fan_in() {
        // Sample std over many weights should approximate sqrt(2/fan_in).
        let mut rng = seed::rng_from(2);
        let layer = DenseLayer::new(200, 50, Activation::Relu, &mut rng);
        let n = (layer.weights.rows() * layer.weights.cols()) as f64;
        let var = layer.weights.iter().map(|w| w * w).sum::<f64>() / n;
        let expected = 2.0 / 200.0;
        assert!((var - expected).abs() < 0.15 * expected, "var = {var}");
    }

    #[test]
    fn weight_mask_scales_forward_and_backward() {
        let layer = DenseLayer {
            weights: Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Linear,
        };
        let mask = Matrix::from_vec(1, 2, vec![0.0, 2.0]).unwrap();
        let x = Matrix::from_vec(1, 2, vec![5.0, 3.0]).unwrap();
        let (pre, _) = layer.forward(&x, Some(&mask)).unwrap();
        assert_eq!(pre.get(0, 0), 6.0);

        let dpost = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let (grads, dx) = layer.backward(&x, &pre, &dpost, Some(&mask));
        // Masked-out weight receives no gradient; kept weight carries the scale.
        assert_eq!(grads.weights.as_slice(), &[0.0, 6.0]);
        assert_eq!(dx.as_slice(), &[0.0, 2.0]);
    }
}
