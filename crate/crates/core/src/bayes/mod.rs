//! Stochastic model wrappers: MC-Dropout, MC-DropConnect, Flipout, and deep
//! ensembles over the dense engine, plus their shared training loop and
//! checkpoint format.
//!
//! All four variants expose the same surface: `sample_forward` runs one
//! stochastic pass, `predict_t` stacks T of them, and the disentangling
//! estimators downstream never need to know which mechanism produced the
//! spread.

mod checkpoint;
mod flipout;
mod pass;

pub use checkpoint::{load_model, save_model};
pub use flipout::{
    flipout_kl, flipout_kl_with_grads, FlipoutGrads, FlipoutLayer, FlipoutNoise, PriorMixture,
};
pub use pass::{
    backward_pass, forward_noisy, forward_traced, gaussian_split, loss_and_grads,
    sample_pass_noise, GlLossConfig, LossGrads, NoiseSpec, PassNoise, Trace, VAR_FLOOR,
};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::nn::{AdamConfig, AdamState, Activation, DenseLayer, ExtraPenalty, Matrix, TrainConfig};
use crate::{seed, Error, Result};

/// Monte-Carlo draws per example in the Gaussian-logits training loss.
pub const GL_TRAIN_DRAWS: usize = 32;

/// How a network's weights are made stochastic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variant {
    /// Node dropout on designated hidden activations, masks kept at
    /// inference; `rate` is the drop probability.
    McDropout { rate: f64 },
    /// Weight dropout on the matrices entering and leaving the designated
    /// hidden layer.
    McDropConnect { rate: f64 },
    /// Variational Gaussian weights on the designated hidden layer with
    /// flipout-decorrelated perturbations.
    Flipout,
    /// `members` independently trained copies; passes cycle the members.
    DeepEnsemble { members: usize },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::McDropout { .. } => "mc_dropout",
            Variant::McDropConnect { .. } => "mc_dropconnect",
            Variant::Flipout => "flipout",
            Variant::DeepEnsemble { .. } => "deep_ensemble",
        }
    }
}

/// Output head of a stochastic classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// C logits; probabilities via softmax.
    Softmax,
    /// 2C channels: per-class logit means and (softplus-transformed)
    /// variances.
    GaussianLogits,
}

impl Head {
    pub fn out_width(&self, class_count: usize) -> usize {
        match self {
            Head::Softmax => class_count,
            Head::GaussianLogits => 2 * class_count,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::GaussianLogits => "gaussian_logits",
        }
    }
}

/// One layer of a stochastic network.
#[derive(Debug, Clone)]
pub enum NetLayer {
    Dense(DenseLayer),
    Flipout(FlipoutLayer),
}

impl NetLayer {
    pub fn in_dim(&self) -> usize {
        match self {
            NetLayer::Dense(l) => l.in_dim(),
            NetLayer::Flipout(l) => l.in_dim(),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            NetLayer::Dense(l) => l.out_dim(),
            NetLayer::Flipout(l) => l.out_dim(),
        }
    }
}

/// A dense stack in which some layers may be variational.
#[derive(Debug, Clone)]
pub struct StochasticNet {
    pub layers: Vec<NetLayer>,
    pub class_count: usize,
}

impl StochasticNet {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn block_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                NetLayer::Dense(_) => 2,
                NetLayer::Flipout(_) => 4,
            })
            .sum()
    }

    /// Flat parameter block sizes in optimizer order.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.block_count());
        for layer in &self.layers {
            match layer {
                NetLayer::Dense(l) => {
                    sizes.push(l.weights.rows() * l.weights.cols());
                    sizes.push(l.bias.len());
                }
                NetLayer::Flipout(l) => {
                    sizes.push(l.w_mean.rows() * l.w_mean.cols());
                    sizes.push(l.w_rho.rows() * l.w_rho.cols());
                    sizes.push(l.b_mean.len());
                    sizes.push(l.b_rho.len());
                }
            }
        }
        sizes
    }

    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::with_capacity(self.block_count());
        for layer in &mut self.layers {
            match layer {
                NetLayer::Dense(l) => {
                    blocks.push(l.weights.as_mut_slice());
                    blocks.push(l.bias.as_mut_slice());
                }
                NetLayer::Flipout(l) => {
                    blocks.push(l.w_mean.as_mut_slice());
                    blocks.push(l.w_rho.as_mut_slice());
                    blocks.push(l.b_mean.as_mut_slice());
                    blocks.push(l.b_rho.as_mut_slice());
                }
            }
        }
        blocks
    }

    /// All parameters flattened into one vector (checkpoint and distance
    /// diagnostics).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                NetLayer::Dense(l) => {
                    out.extend(l.weights.iter());
                    out.extend(l.bias.iter().copied());
                }
                NetLayer::Flipout(l) => {
                    out.extend(l.w_mean.iter());
                    out.extend(l.w_rho.iter());
                    out.extend(l.b_mean.iter().copied());
                    out.extend(l.b_rho.iter().copied());
                }
            }
        }
        out
    }
}

/// Network shape for one dataset family: dimension chain plus where the
/// stochastic machinery attaches.
#[derive(Debug, Clone)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub class_count: usize,
    /// Index (into the layer stack) of the designated "Bayesian" hidden
    /// layer: flipout replaces it, dropconnect masks the weights entering
    /// and leaving it.
    pub bayes_layer: usize,
    /// Layers whose activations get node dropout under MC-Dropout.
    pub dropout_sites: Vec<usize>,
}

impl Arch {
    /// 2-feature toy problems (two moons, triangles): 2x32x32xC with
    /// dropout on both hidden layers.
    pub fn toy(class_count: usize) -> Self {
        Arch {
            input_dim: 2,
            hidden: vec![32, 32],
            class_count,
            bayes_layer: 1,
            dropout_sites: vec![0, 1],
        }
    }

    /// Wine tabular net: 13x32x32x16x3 with the 16-unit layer designated.
    pub fn wine() -> Self {
        Arch {
            input_dim: 13,
            hidden: vec![32, 32, 16],
            class_count: 3,
            bayes_layer: 2,
            dropout_sites: vec![2],
        }
    }

    /// Same shape with a different class count (leave-one-class-out
    /// retrains with C-1 classes).
    pub fn with_class_count(&self, class_count: usize) -> Self {
        Arch {
            class_count,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.bayes_layer >= self.hidden.len() {
            return Err(Error::domain(
                "Arch",
                format!(
                    "bayes layer {} outside hidden stack of {}",
                    self.bayes_layer,
                    self.hidden.len()
                ),
            ));
        }
        if self.class_count < 2 {
            return Err(Error::domain(
                "Arch",
                format!("need at least 2 classes, got {}", self.class_count),
            ));
        }
        if self.dropout_sites.iter().any(|&s| s >= self.hidden.len()) {
            return Err(Error::domain("Arch", "dropout site outside hidden stack"));
        }
        Ok(())
    }

    fn dims(&self, head: Head) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(head.out_width(self.class_count));
        dims
    }
}

/// A stochastic classifier: one or more networks plus the noise mechanism
/// and the number of MC passes used at evaluation time.
#[derive(Debug, Clone)]
pub struct StochasticModel {
    pub variant: Variant,
    pub head: Head,
    /// MC passes (T) used by `predict_t` callers; forced to the member
    /// count for ensembles.
    pub passes: usize,
    pub dropout_sites: Vec<usize>,
    pub dropconnect_sites: Vec<usize>,
    pub nets: Vec<StochasticNet>,
    trained: bool,
}

impl StochasticModel {
    /// Builds fresh member networks with seeds derived per member from
    /// `init_seed`.
    pub fn new(
        arch: &Arch,
        variant: Variant,
        head: Head,
        passes: usize,
        init_seed: u64,
    ) -> Result<Self> {
        arch.validate()?;
        match variant {
            Variant::McDropout { rate } | Variant::McDropConnect { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::domain(
                        "StochasticModel::new",
                        format!("drop rate {rate} outside [0, 1)"),
                    ));
                }
            }
            Variant::DeepEnsemble { members } => {
                if members == 0 {
                    return Err(Error::domain(
                        "StochasticModel::new",
                        "ensemble needs at least one member",
                    ));
                }
            }
            Variant::Flipout => {}
        }
        if passes == 0 {
            return Err(Error::domain(
                "StochasticModel::new",
                "need at least one MC pass",
            ));
        }
        let member_count = match variant {
            Variant::DeepEnsemble { members } => members,
            _ => 1,
        };
        let dims = arch.dims(head);
        let last = dims.len() - 2;
        let nets = (0..member_count)
            .map(|m| {
                let mut rng = seed::rng(init_seed, &[m as u64]);
                let layers = dims
                    .windows(2)
                    .enumerate()
                    .map(|(j, w)| {
                        let act = if j == last {
                            Activation::Linear
                        } else {
                            Activation::Relu
                        };
                        if matches!(variant, Variant::Flipout) && j == arch.bayes_layer {
                            NetLayer::Flipout(FlipoutLayer::new(w[0], w[1], act, &mut rng))
                        } else {
                            NetLayer::Dense(DenseLayer::new(w[0], w[1], act, &mut rng))
                        }
                    })
                    .collect();
                StochasticNet {
                    layers,
                    class_count: arch.class_count,
                }
            })
            .collect();
        Ok(StochasticModel {
            variant,
            head,
            passes: match variant {
                Variant::DeepEnsemble { members } => members,
                _ => passes,
            },
            dropout_sites: match variant {
                Variant::McDropout { .. } => arch.dropout_sites.clone(),
                _ => Vec::new(),
            },
            dropconnect_sites: match variant {
                Variant::McDropConnect { .. } => vec![arch.bayes_layer, arch.bayes_layer + 1],
                _ => Vec::new(),
            },
            nets,
            trained: false,
        })
    }

    pub fn class_count(&self) -> usize {
        self.nets[0].class_count
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Marks the model trained; checkpoint loading restores the flag and
    /// tests use it to probe the pass machinery directly.
    pub fn set_trained(&mut self, trained: bool) {
        self.trained = trained;
    }

    fn noise_spec(&self) -> NoiseSpec<'_> {
        let rate = match self.variant {
            Variant::McDropout { rate } | Variant::McDropConnect { rate } => rate,
            _ => 0.0,
        };
        NoiseSpec {
            dropout: &self.dropout_sites,
            dropconnect: &self.dropconnect_sites,
            rate,
        }
    }

    /// Draws the noise realization one stochastic pass would use.
    pub fn sample_noise(&self, batch_rows: usize, rng: &mut impl Rng) -> PassNoise {
        sample_pass_noise(&self.nets[0], self.noise_spec(), batch_rows, rng)
    }

    fn pass_forward(&self, member: usize, batch: &Matrix, rng: &mut impl Rng) -> Result<Matrix> {
        let net = &self.nets[member];
        let noise = sample_pass_noise(net, self.noise_spec(), batch.rows(), rng);
        forward_noisy(net, batch, &noise)
    }

    /// One stochastic forward pass; raw head outputs for the batch.
    /// Ensembles serve the first member (the start of the round robin).
    pub fn sample_forward(&self, batch: &Matrix, rng: &mut impl Rng) -> Result<Matrix> {
        if !self.trained {
            return Err(Error::State(
                "sample_forward called before training".into(),
            ));
        }
        self.pass_forward(0, batch, rng)
    }

    /// `t` stochastic passes. For ensembles the count is the member count
    /// (one pass per member, round robin), whatever `t` is requested.
    pub fn predict_t(&self, batch: &Matrix, t: usize, rng: &mut impl Rng) -> Result<Vec<Matrix>> {
        if !self.trained {
            return Err(Error::State("predict_t called before training".into()));
        }
        if t == 0 {
            return Err(Error::domain("predict_t", "need at least one pass"));
        }
        let effective = match self.variant {
            Variant::DeepEnsemble { members } => members,
            _ => t,
        };
        (0..effective)
            .map(|pass| self.pass_forward(pass % self.nets.len(), batch, rng))
            .collect()
    }
}

/// Scheduled epochs for a variant: flipout trains five times longer than
/// the sampling-based variants.
pub fn epochs_for(variant: Variant, base_epochs: usize) -> usize {
    match variant {
        Variant::Flipout => base_epochs * 5,
        _ => base_epochs,
    }
}

/// Outcome of a training run.
#[derive(Debug, Clone, Copy)]
pub struct FitReport {
    /// Mean loss over the final epoch, averaged across ensemble members.
    pub final_loss: f64,
    pub epochs_run: usize,
}

/// Trains the model in place. Masks stay active during training, flipout
/// adds `kl/n_train` to every step's loss, and ensemble members get
/// member-specific shuffle and noise streams derived from `config.seed`.
pub fn train_stochastic(
    model: &mut StochasticModel,
    x: &Matrix,
    labels: &[usize],
    config: &TrainConfig,
) -> Result<FitReport> {
    if x.rows() != labels.len() {
        return Err(Error::shape(
            "train_stochastic",
            format!("{} labels", x.rows()),
            format!("{}", labels.len()),
        ));
    }
    if x.rows() == 0 {
        return Err(Error::domain("train_stochastic", "empty training set"));
    }
    let classes = model.class_count();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::domain(
            "train_stochastic",
            format!("label {bad} out of range for {classes} classes"),
        ));
    }
    if x.cols() != model.nets[0].in_dim() {
        return Err(Error::shape(
            "train_stochastic",
            format!("{} feature columns", model.nets[0].in_dim()),
            format!("{}", x.cols()),
        ));
    }
    let batch_size = config.batch_size.max(1);
    let kl_weight = 1.0 / x.rows() as f64;
    let head = model.head;
    let spec_rate = model.noise_spec().rate;
    let dropout_sites = model.dropout_sites.clone();
    let dropconnect_sites = model.dropconnect_sites.clone();
    let mut final_loss = 0.0;

    for (member, net) in model.nets.iter_mut().enumerate() {
        let m = member as u64;
        let mut shuffle_rng = seed::rng(config.seed, &[m, 0]);
        let mut noise_rng = seed::rng(config.seed, &[m, 1]);
        let mut adam = AdamState::new(
            AdamConfig::with_learning_rate(config.learning_rate),
            &net.block_sizes(),
        );
        let mut indices: Vec<usize> = (0..x.rows()).collect();
        let mut last_epoch_loss = 0.0;
        let spec = NoiseSpec {
            dropout: &dropout_sites,
            dropconnect: &dropconnect_sites,
            rate: spec_rate,
        };
        for epoch in 0..config.epochs {
            indices.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for (batch_idx, chunk) in indices.chunks(batch_size).enumerate() {
                let batch = Matrix::from_fn(chunk.len(), x.cols(), |r, c| x.get(chunk[r], c));
                let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
                let noise = sample_pass_noise(net, spec, batch.rows(), &mut noise_rng);
                let gl = GlLossConfig {
                    draws: GL_TRAIN_DRAWS,
                    seed: seed::derive(config.seed, &[m, 2, epoch as u64, batch_idx as u64]),
                };
                let mut out = loss_and_grads(net, head, &batch, &batch_labels, &noise, gl)?;
                let mut loss = out.loss;
                // Variational layers pay the prior term; one fresh draw per
                // step keeps the estimator unbiased at minimal cost.
                let mut kl_extra: Option<ExtraPenalty> = None;
                let mut block_cursor = 0usize;
                for layer in &net.layers {
                    match layer {
                        NetLayer::Dense(_) => block_cursor += 2,
                        NetLayer::Flipout(fl) => {
                            let (kl, kg) = flipout_kl_with_grads(fl, 1, &mut noise_rng);
                            let penalty =
                                kl_extra.get_or_insert_with(|| ExtraPenalty {
                                    value: 0.0,
                                    grads: net
                                        .block_sizes()
                                        .iter()
                                        .map(|&n| vec![0.0; n])
                                        .collect(),
                                });
                            penalty.value += kl_weight * kl;
                            let blocks = [
                                kg.w_mean.as_slice().to_vec(),
                                kg.w_rho.as_slice().to_vec(),
                                kg.b_mean,
                                kg.b_rho,
                            ];
                            for (offset, block) in blocks.into_iter().enumerate() {
                                for (dst, src) in penalty.grads[block_cursor + offset]
                                    .iter_mut()
                                    .zip(block)
                                {
                                    *dst += kl_weight * src;
                                }
                            }
                            block_cursor += 4;
                        }
                    }
                }
                if let Some(p) = &kl_extra {
                    loss += p.value;
                    for (g, pg) in out.grads.iter_mut().zip(&p.grads) {
                        for (a, b) in g.iter_mut().zip(pg) {
                            *a += b;
                        }
                    }
                }
                for (block_idx, g) in out.grads.iter().enumerate() {
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Training {
                            layer: block_idx,
                            detail: format!("non-finite gradient (member {member})"),
                        });
                    }
                }
                adam.step(&mut net.param_blocks_mut(), &out.grads)?;
                epoch_loss += loss;
                batches += 1;
            }
            last_epoch_loss = epoch_loss / batches.max(1) as f64;
        }
        final_loss += last_epoch_loss;
    }
    model.trained = true;
    Ok(FitReport {
        final_loss: final_loss / model.nets.len() as f64,
        epochs_run: config.epochs,
    })
}
