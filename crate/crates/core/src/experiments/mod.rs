//! The three benchmark experiments and their shared bookkeeping.
//!
//! Each experiment sweeps one condition (training-set fraction, label-noise
//! fraction, or held-out class) across repetitions, trains the requested
//! stochastic variant under one or both uncertainty estimators, and produces
//! flat [`RunRecord`] rows. Seeds for every run derive from the master seed,
//! the experiment id, the repetition, and the condition value, so adding or
//! removing conditions never perturbs the runs that stay.

mod eval;
mod runner;

pub use eval::{evaluate, uncertainty_grid, Evaluation, GridBounds, UncertaintyGrid};
pub use runner::{epochs_for_fraction, run_dataset_size, run_label_noise, run_ood};

use std::path::PathBuf;

use crate::bayes::Arch;
use crate::data::{self, Split};
use crate::metrics::{ci95, disentanglement_error, pearson, DeResult};
use crate::{seed, Error, Result};

/// Training-set fractions swept by the dataset-size experiment.
pub const DEFAULT_FRACTIONS: [f64; 7] = [0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 1.00];

/// Label-shuffle fractions swept by the noise experiment: 0.0 to 1.0 in
/// steps of 0.1.
pub fn default_noise_levels() -> Vec<f64> {
    (0..=10).map(|i| f64::from(i) / 10.0).collect()
}

/// Knobs shared by all experiment drivers.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub fractions: Vec<f64>,
    pub noise_levels: Vec<f64>,
    /// Epochs at fraction 1.0; smaller fractions scale this up, see
    /// [`epochs_for_fraction`].
    pub base_epochs: usize,
    pub repetitions: usize,
    /// Stochastic forward passes per prediction.
    pub passes: usize,
    /// Monte Carlo draws for sampled-softmax entropies.
    pub n_eval: usize,
    pub master_seed: u64,
    /// None uses the dataset family default (32 synthetic, 128 tabular).
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Attach per-test-sample uncertainty vectors to each record.
    pub dump_per_sample: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            noise_levels: default_noise_levels(),
            base_epochs: 100,
            repetitions: 5,
            passes: 50,
            n_eval: 1000,
            master_seed: 0,
            batch_size: None,
            learning_rate: 1e-3,
            dump_per_sample: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.is_empty() {
            return Err(Error::Config("fractions list is empty".into()));
        }
        for &f in &self.fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!(
                    "fraction {f} outside (0, 1]"
                )));
            }
        }
        for &l in &self.noise_levels {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::Config(format!(
                    "noise level {l} outside [0, 1]"
                )));
            }
        }
        if self.noise_levels.is_empty() {
            return Err(Error::Config("noise level list is empty".into()));
        }
        if self.base_epochs == 0 {
            return Err(Error::Config("base_epochs must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be positive".into()));
        }
        if self.passes < 2 {
            return Err(Error::Config(
                "need at least 2 stochastic passes to split uncertainty".into(),
            ));
        }
        if self.n_eval == 0 {
            return Err(Error::Config("n_eval must be positive".into()));
        }
        if let Some(b) = self.batch_size {
            if b == 0 {
                return Err(Error::Config("batch_size must be positive".into()));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive and finite",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Which sweep produced a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentKind {
    DatasetSize,
    LabelNoise,
    Ood,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::DatasetSize => "dataset_size",
            ExperimentKind::LabelNoise => "label_noise",
            ExperimentKind::Ood => "ood",
        }
    }

    /// Seed-stream id, kept distinct per experiment so their runs never
    /// share randomness.
    fn stream(&self) -> u64 {
        match self {
            ExperimentKind::DatasetSize => 1,
            ExperimentKind::LabelNoise => 2,
            ExperimentKind::Ood => 3,
        }
    }
}

/// Which uncertainty estimators to train and score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSet {
    It,
    Gl,
    Both,
}

impl EstimatorSet {
    pub fn wants_it(&self) -> bool {
        matches!(self, EstimatorSet::It | EstimatorSet::Both)
    }

    pub fn wants_gl(&self) -> bool {
        matches!(self, EstimatorSet::Gl | EstimatorSet::Both)
    }

    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSet::It => "it",
            EstimatorSet::Gl => "gl",
            EstimatorSet::Both => "both",
        }
    }
}

/// One estimator channel, for selecting record columns downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    It,
    Gl,
}

impl EstimatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorKind::It => "it",
            EstimatorKind::Gl => "gl",
        }
    }
}

/// A dataset recipe the drivers can materialize fresh per repetition.
#[derive(Debug, Clone)]
pub enum DatasetSpec {
    TwoMoons {
        n_train: usize,
        n_test: usize,
        noise_sd: f64,
    },
    Triangles {
        n_train: usize,
        n_test: usize,
    },
    Wine {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn two_moons() -> Self {
        DatasetSpec::TwoMoons {
            n_train: 1000,
            n_test: 1000,
            noise_sd: data::TWO_MOONS_NOISE_SD,
        }
    }

    pub fn triangles() -> Self {
        DatasetSpec::Triangles {
            n_train: 1000,
            n_test: 1000,
        }
    }

    pub fn wine(path: impl Into<PathBuf>) -> Self {
        DatasetSpec::Wine { path: path.into() }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::TwoMoons { .. } => "two_moons",
            DatasetSpec::Triangles { .. } => "triangles",
            DatasetSpec::Wine { .. } => "wine",
        }
    }

    /// Generates or loads a train/test split, fully determined by `seed`.
    pub fn materialize(&self, seed_val: u64) -> Result<Split> {
        match self {
            DatasetSpec::TwoMoons {
                n_train,
                n_test,
                noise_sd,
            } => {
                let train =
                    data::two_moons(*n_train, *noise_sd, &mut seed::rng(seed_val, &[0]))?;
                let test = data::two_moons(*n_test, *noise_sd, &mut seed::rng(seed_val, &[1]))?;
                Split::new(train, test)
            }
            DatasetSpec::Triangles { n_train, n_test } => {
                let train = data::triangles(*n_train, &mut seed::rng(seed_val, &[0]))?;
                let test = data::triangles(*n_test, &mut seed::rng(seed_val, &[1]))?;
                Split::new(train, test)
            }
            DatasetSpec::Wine { path } => data::load_wine(path, seed_val),
        }
    }

    /// Network shape for this dataset family at the given output width.
    pub fn arch(&self, class_count: usize) -> Arch {
        match self {
            DatasetSpec::TwoMoons { .. } | DatasetSpec::Triangles { .. } => {
                Arch::toy(class_count)
            }
            DatasetSpec::Wine { .. } => Arch::wine().with_class_count(class_count),
        }
    }

    pub fn default_batch_size(&self) -> usize {
        match self {
            DatasetSpec::TwoMoons { .. } | DatasetSpec::Triangles { .. } => 32,
            DatasetSpec::Wine { .. } => 128,
        }
    }

    /// True for the planar synthetic families that support uncertainty
    /// rasters.
    pub fn is_planar(&self) -> bool {
        matches!(
            self,
            DatasetSpec::TwoMoons { .. } | DatasetSpec::Triangles { .. }
        )
    }
}

/// Per-test-sample uncertainty vectors for one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleScores {
    pub au: Vec<f64>,
    pub eu: Vec<f64>,
}

/// Optional per-sample payload attached to a record when configured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerSampleDump {
    pub it: Option<SampleScores>,
    pub gl: Option<SampleScores>,
}

/// One (condition, repetition) cell of an experiment.
///
/// `accuracy()` prefers the softmax-head model; when both estimators run,
/// the Gaussian-logits model's own accuracy lands in `gl_accuracy` so its
/// correlations can be computed against the model that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: ExperimentKind,
    /// Condition value: fraction, noise level, or held-out class index.
    pub condition: f64,
    pub rep: usize,
    /// Run seed, derived; recorded so single cells can be replayed.
    pub seed: u64,
    /// True when at least one training attempt diverged; surviving columns
    /// stay populated.
    pub failed: bool,
    pub it_accuracy: Option<f64>,
    pub gl_accuracy: Option<f64>,
    /// Accuracy against unshuffled labels, label-noise experiment only.
    pub clean_accuracy: Option<f64>,
    pub it_au: Option<f64>,
    pub it_eu: Option<f64>,
    pub gl_au: Option<f64>,
    pub gl_eu: Option<f64>,
    pub per_sample: Option<PerSampleDump>,
}

impl RunRecord {
    pub(crate) fn pending(
        experiment: ExperimentKind,
        condition: f64,
        rep: usize,
        seed: u64,
    ) -> Self {
        RunRecord {
            experiment,
            condition,
            rep,
            seed,
            failed: false,
            it_accuracy: None,
            gl_accuracy: None,
            clean_accuracy: None,
            it_au: None,
            it_eu: None,
            gl_au: None,
            gl_eu: None,
            per_sample: None,
        }
    }

    /// The headline accuracy column: softmax-head model if scored, else the
    /// Gaussian-logits model.
    pub fn accuracy(&self) -> Option<f64> {
        self.it_accuracy.or(self.gl_accuracy)
    }

    fn au(&self, which: EstimatorKind) -> Option<f64> {
        match which {
            EstimatorKind::It => self.it_au,
            EstimatorKind::Gl => self.gl_au,
        }
    }

    fn eu(&self, which: EstimatorKind) -> Option<f64> {
        match which {
            EstimatorKind::It => self.it_eu,
            EstimatorKind::Gl => self.gl_eu,
        }
    }

    /// Accuracy of the model that produced the given estimator's scores.
    fn accuracy_for(&self, which: EstimatorKind) -> Option<f64> {
        match which {
            EstimatorKind::It => self.it_accuracy,
            EstimatorKind::Gl => self.gl_accuracy,
        }
    }
}

/// Per-sample scores for one held-out class of the OoD experiment.
#[derive(Debug, Clone)]
pub struct OodScores {
    /// Class excluded from training.
    pub class: usize,
    pub rep: usize,
    pub seed: u64,
    /// True where the test row belongs to the held-out class; by
    /// construction never all true or all false.
    pub ood_mask: Vec<bool>,
    pub it: Option<SampleScores>,
    pub gl: Option<SampleScores>,
}

fn push_opt(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        out.push_str(&v.to_string());
    }
}

/// Renders records as CSV. Float columns use the shortest round-trip
/// representation, so identical runs serialize to identical bytes.
pub fn runs_csv_string(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "experiment,condition,rep,seed,accuracy,it_au,it_eu,gl_au,gl_eu,gl_accuracy,clean_accuracy,failed\n",
    );
    for r in records {
        out.push_str(r.experiment.name());
        out.push(',');
        out.push_str(&r.condition.to_string());
        out.push(',');
        out.push_str(&r.rep.to_string());
        out.push(',');
        out.push_str(&r.seed.to_string());
        push_opt(&mut out, r.accuracy());
        push_opt(&mut out, r.it_au);
        push_opt(&mut out, r.it_eu);
        push_opt(&mut out, r.gl_au);
        push_opt(&mut out, r.gl_eu);
        push_opt(&mut out, r.gl_accuracy);
        push_opt(&mut out, r.clean_accuracy);
        out.push(',');
        out.push_str(if r.failed { "true" } else { "false" });
        out.push('\n');
    }
    out
}

/// Writes [`runs_csv_string`] output to a file.
pub fn write_runs_csv(records: &[RunRecord], path: &std::path::Path) -> Result<()> {
    std::fs::write(path, runs_csv_string(records))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Correlation between confidence and accuracy for one repetition.
///
/// Cells are None when the correlation is undefined (constant inputs) or
/// when failures left fewer than three usable conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct PccRow {
    pub rep: usize,
    pub pcc_au: Option<f64>,
    pub pcc_eu: Option<f64>,
}

fn pcc_cell(conf: &[f64], acc: &[f64]) -> Option<f64> {
    pearson(conf, acc).ok()
}

/// Per-repetition correlations between estimator confidence (negated mean
/// uncertainty) and the matching model's accuracy, across conditions.
pub fn per_rep_pcc(records: &[RunRecord], which: EstimatorKind) -> Vec<PccRow> {
    let mut reps: Vec<usize> = records.iter().map(|r| r.rep).collect();
    reps.sort_unstable();
    reps.dedup();
    let mut rows = Vec::with_capacity(reps.len());
    for rep in reps {
        let mut conf_au = Vec::new();
        let mut conf_eu = Vec::new();
        let mut acc_au = Vec::new();
        let mut acc_eu = Vec::new();
        let mut cells: Vec<&RunRecord> = records.iter().filter(|r| r.rep == rep).collect();
        cells.sort_by(|a, b| a.condition.total_cmp(&b.condition));
        for r in cells {
            let (Some(acc), au, eu) = (r.accuracy_for(which), r.au(which), r.eu(which)) else {
                continue;
            };
            if let Some(au) = au {
                conf_au.push(-au);
                acc_au.push(acc);
            }
            if let Some(eu) = eu {
                conf_eu.push(-eu);
                acc_eu.push(acc);
            }
        }
        rows.push(PccRow {
            rep,
            pcc_au: pcc_cell(&conf_au, &acc_au),
            pcc_eu: pcc_cell(&conf_eu, &acc_eu),
        });
    }
    rows
}

/// Disentanglement scores aggregated across repetitions.
#[derive(Debug, Clone)]
pub struct DeSummary {
    /// Per-repetition score, None where any constituent correlation was
    /// undefined.
    pub per_rep: Vec<(usize, Option<DeResult>)>,
    /// Mean of per-repetition normalized scores.
    pub de_mean: f64,
    /// Mean of per-repetition summed scores.
    pub de_sum: f64,
    /// Halfwidth of the 95% interval on the normalized score; None with
    /// fewer than two usable repetitions.
    pub ci95_halfwidth: Option<f64>,
    pub reps_used: usize,
}

/// Combines dataset-size and label-noise sweeps into the disentanglement
/// score for one estimator.
///
/// Ideal behavior is aleatoric flat over dataset size (correlation 0),
/// epistemic tracking it (1), aleatoric tracking label noise (1), epistemic
/// flat under noise (0); the score sums the distances from those targets.
pub fn de_across_reps(
    size_records: &[RunRecord],
    noise_records: &[RunRecord],
    which: EstimatorKind,
) -> Result<DeSummary> {
    let size_rows = per_rep_pcc(size_records, which);
    let noise_rows = per_rep_pcc(noise_records, which);
    let mut per_rep = Vec::new();
    let mut means = Vec::new();
    let mut sums = Vec::new();
    for s in &size_rows {
        let Some(n) = noise_rows.iter().find(|n| n.rep == s.rep) else {
            continue;
        };
        let de = match (s.pcc_au, s.pcc_eu, n.pcc_au, n.pcc_eu) {
            (Some(a), Some(b), Some(c), Some(d)) => {
                let de = disentanglement_error(a, b, c, d)?;
                means.push(de.de_mean);
                sums.push(de.de_sum);
                Some(de)
            }
            _ => None,
        };
        per_rep.push((s.rep, de));
    }
    if means.is_empty() {
        return Err(Error::InsufficientSamples {
            context: "disentanglement score",
            needed: 1,
            got: 0,
        });
    }
    let reps_used = means.len();
    let k = reps_used as f64;
    let ci = if reps_used >= 2 {
        Some(ci95(&means)?.ci95_halfwidth)
    } else {
        None
    };
    Ok(DeSummary {
        per_rep,
        de_mean: means.iter().sum::<f64>() / k,
        de_sum: sums.iter().sum::<f64>() / k,
        ci95_halfwidth: ci,
        reps_used,
    })
}
