//! Adam optimizer over flat parameter blocks.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// First/second moment state for a fixed list of parameter blocks.
///
/// A block is one parameter tensor flattened (layer weights, biases, flipout
/// means, ...). The shape list is fixed at construction; `step` validates it.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    t: u64,
    blocks: Vec<Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig, block_sizes: &[usize]) -> Self {
        AdamState {
            config,
            t: 0,
            blocks: block_sizes
                .iter()
                .map(|&n| Moments {
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                })
                .collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one bias-corrected Adam update in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.blocks.len() || grads.len() != self.blocks.len() {
            return Err(Error::shape(
                "AdamState::step",
                format!("{} blocks", self.blocks.len()),
                format!("{} param / {} grad blocks", params.len(), grads.len()),
            ));
        }
        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for ((block, p), g) in self.blocks.iter_mut().zip(params.iter_mut()).zip(grads) {
            if p.len() != block.m.len() || g.len() != block.m.len() {
                return Err(Error::shape(
                    "AdamState::step",
                    format!("block of {} values", block.m.len()),
                    format!("{} params / {} grads", p.len(), g.len()),
                ));
            }
            for i in 0..g.len() {
                block.m[i] = c.beta1 * block.m[i] + (1.0 - c.beta1) * g[i];
                block.v[i] = c.beta2 * block.v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = block.m[i] / bc1;
                let v_hat = block.v[i] / bc2;
                p[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar Adam oracle, written directly from the update rule.
    fn adam_oracle(grads: &[f64], lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for (k, &g) in grads.iter().enumerate() {
            let t = (k + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn scalar_steps_match_oracle() {
        let grad_seq = [0.3, -1.1, 0.7, 0.7, -0.2];
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        let mut p = [0.0f64];
        for &g in &grad_seq {
            state.step(&mut [&mut p], &[vec![g]]).unwrap();
        }
        let expected = adam_oracle(&grad_seq, 1e-3);
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
    }

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With bias correction the first update is lr * g/(|g| + eps).
        let mut state = AdamState::new(AdamConfig::with_learning_rate(0.01), &[1]);
        let mut p = [1.0f64];
        state.step(&mut [&mut p], &[vec![4.2]]).unwrap();
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-8);
    }

    #[test]
    fn block_count_mismatch_errors() {
        let mut state = AdamState::new(AdamConfig::default(), &[2, 3]);
        let mut a = [0.0; 2];
        assert!(state.step(&mut [&mut a], &[vec![0.0; 2]]).is_err());
    }
}
