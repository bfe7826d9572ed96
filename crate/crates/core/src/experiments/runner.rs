//! Drivers that sweep one condition across repetitions, training one model
//! per requested estimator in a rayon-parallel job pool.
//!
//! Seed layout per run: `split_seed = derive(master, [experiment, 0, rep])`
//! and `run_seed = derive(master, [experiment, 1, rep, condition bits])`.
//! Run substreams: 0 subsampling, 1 train-label shuffling, 2 test-label
//! shuffling, 3 softmax-model training, 4 Gaussian-logits training, 5 and 6
//! the matching evaluations. Because each cell's seeds depend only on these
//! coordinates, results are independent of worker scheduling and of which
//! other conditions run alongside.

use rayon::prelude::*;

use super::eval::{evaluate, Evaluation};
use super::{
    DatasetSpec, EstimatorSet, ExperimentConfig, ExperimentKind, OodScores, PerSampleDump,
    RunRecord, SampleScores,
};
use crate::bayes::{epochs_for, train_stochastic, Arch, Head, StochasticModel, Variant};
use crate::data::{leave_one_class_out, shuffle_labels, stratified_subsample, Dataset};
use crate::nn::{Matrix, TrainConfig};
use crate::{seed, Error, Result};

/// Epoch budget for a training fraction: the full-data budget scaled by
/// `1 / fraction` so every run sees a comparable number of update steps,
/// capped at 100x the base to keep the smallest fractions bounded.
pub fn epochs_for_fraction(base_epochs: usize, fraction: f64) -> usize {
    let scaled = (base_epochs as f64 / fraction).round() as usize;
    scaled.clamp(1, base_epochs.saturating_mul(100))
}

struct FitSpec<'a> {
    arch: &'a Arch,
    variant: Variant,
    train_x: &'a Matrix,
    train_labels: &'a [usize],
    test_x: &'a Matrix,
    test_labels: &'a [usize],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    passes: usize,
    n_eval: usize,
}

/// Trains one model and evaluates it. `train_seed` feeds init and the
/// optimizer; `eval_seed` feeds the stochastic passes and sampled softmaxes.
fn fit_and_eval(spec: &FitSpec, head: Head, train_seed: u64, eval_seed: u64) -> Result<Evaluation> {
    let mut model = StochasticModel::new(
        spec.arch,
        spec.variant,
        head,
        spec.passes,
        seed::derive(train_seed, &[0]),
    )?;
    let cfg = TrainConfig {
        epochs: epochs_for(spec.variant, spec.epochs),
        batch_size: spec.batch_size,
        learning_rate: spec.learning_rate,
        seed: seed::derive(train_seed, &[1]),
    };
    train_stochastic(&mut model, spec.train_x, spec.train_labels, &cfg)?;
    evaluate(
        &model,
        spec.test_x,
        spec.test_labels,
        spec.passes,
        spec.n_eval,
        eval_seed,
    )
}

/// Runs both requested estimators for one cell, folding results into the
/// record. A diverged training marks the record failed and leaves that
/// estimator's columns empty; other errors abort the sweep.
fn run_estimators(
    record: &mut RunRecord,
    spec: &FitSpec,
    estimators: EstimatorSet,
    run_seed: u64,
    dump: bool,
) -> Result<(Option<Evaluation>, Option<Evaluation>)> {
    let mut it_eval = None;
    let mut gl_eval = None;
    let channels: [(bool, Head, u64, u64); 2] = [
        (estimators.wants_it(), Head::Softmax, 3, 5),
        (estimators.wants_gl(), Head::GaussianLogits, 4, 6),
    ];
    for (wanted, head, train_stream, eval_stream) in channels {
        if !wanted {
            continue;
        }
        let outcome = fit_and_eval(
            spec,
            head,
            seed::derive(run_seed, &[train_stream]),
            seed::derive(run_seed, &[eval_stream]),
        );
        match outcome {
            Ok(ev) => match head {
                Head::Softmax => {
                    record.it_accuracy = Some(ev.accuracy);
                    record.it_au = Some(ev.mean_au);
                    record.it_eu = Some(ev.mean_eu);
                    it_eval = Some(ev);
                }
                Head::GaussianLogits => {
                    record.gl_accuracy = Some(ev.accuracy);
                    record.gl_au = Some(ev.mean_au);
                    record.gl_eu = Some(ev.mean_eu);
                    gl_eval = Some(ev);
                }
            },
            Err(Error::Training { .. }) => record.failed = true,
            Err(e) => return Err(e),
        }
    }
    if dump {
        let scores = |ev: &Option<Evaluation>| {
            ev.as_ref().map(|e| SampleScores {
                au: e.au.clone(),
                eu: e.eu.clone(),
            })
        };
        record.per_sample = Some(PerSampleDump {
            it: scores(&it_eval),
            gl: scores(&gl_eval),
        });
    }
    Ok((it_eval, gl_eval))
}

fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| {
        a.condition
            .total_cmp(&b.condition)
            .then(a.rep.cmp(&b.rep))
    });
}

/// Sweep over training-set fractions. Each cell subsamples the split's
/// training half stratified by class, scales the epoch budget by the
/// inverse fraction, and scores on the untouched test half.
pub fn run_dataset_size(
    cfg: &ExperimentConfig,
    dataset: &DatasetSpec,
    variant: Variant,
    estimators: EstimatorSet,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let kind = ExperimentKind::DatasetSize;
    let jobs: Vec<(f64, usize)> = cfg
        .fractions
        .iter()
        .flat_map(|&f| (0..cfg.repetitions).map(move |rep| (f, rep)))
        .collect();
    let mut records = jobs
        .into_par_iter()
        .map(|(fraction, rep)| -> Result<RunRecord> {
            let split_seed = seed::derive(cfg.master_seed, &[kind.stream(), 0, rep as u64]);
            let split = dataset.materialize(split_seed)?;
            let run_seed = seed::derive(
                cfg.master_seed,
                &[kind.stream(), 1, rep as u64, fraction.to_bits()],
            );
            let train = stratified_subsample(&split.train, fraction, &mut seed::rng(run_seed, &[0]))?;
            let arch = dataset.arch(split.train.class_count());
            let spec = FitSpec {
                arch: &arch,
                variant,
                train_x: train.features(),
                train_labels: train.labels(),
                test_x: split.test.features(),
                test_labels: split.test.labels(),
                epochs: epochs_for_fraction(cfg.base_epochs, fraction),
                batch_size: cfg.batch_size.unwrap_or_else(|| dataset.default_batch_size()),
                learning_rate: cfg.learning_rate,
                passes: cfg.passes,
                n_eval: cfg.n_eval,
            };
            let mut record = RunRecord::pending(kind, fraction, rep, run_seed);
            run_estimators(&mut record, &spec, estimators, run_seed, cfg.dump_per_sample)?;
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// Sweep over label-shuffle fractions. Train and test labels are shuffled
/// independently at the same level; accuracy is scored against the noisy
/// test labels, with accuracy against the clean labels kept as a
/// diagnostic column. At level 0 the shuffle is the identity, so that cell
/// doubles as the noise-free baseline.
pub fn run_label_noise(
    cfg: &ExperimentConfig,
    dataset: &DatasetSpec,
    variant: Variant,
    estimators: EstimatorSet,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let kind = ExperimentKind::LabelNoise;
    let jobs: Vec<(f64, usize)> = cfg
        .noise_levels
        .iter()
        .flat_map(|&l| (0..cfg.repetitions).map(move |rep| (l, rep)))
        .collect();
    let mut records = jobs
        .into_par_iter()
        .map(|(level, rep)| -> Result<RunRecord> {
            let split_seed = seed::derive(cfg.master_seed, &[kind.stream(), 0, rep as u64]);
            let split = dataset.materialize(split_seed)?;
            let run_seed = seed::derive(
                cfg.master_seed,
                &[kind.stream(), 1, rep as u64, level.to_bits()],
            );
            let train = shuffle_labels(&split.train, level, &mut seed::rng(run_seed, &[1]))?;
            let test = shuffle_labels(&split.test, level, &mut seed::rng(run_seed, &[2]))?;
            let arch = dataset.arch(split.train.class_count());
            let spec = FitSpec {
                arch: &arch,
                variant,
                train_x: train.features(),
                train_labels: train.labels(),
                test_x: test.features(),
                test_labels: test.labels(),
                epochs: cfg.base_epochs,
                batch_size: cfg.batch_size.unwrap_or_else(|| dataset.default_batch_size()),
                learning_rate: cfg.learning_rate,
                passes: cfg.passes,
                n_eval: cfg.n_eval,
            };
            let mut record = RunRecord::pending(kind, level, rep, run_seed);
            let (it_eval, gl_eval) =
                run_estimators(&mut record, &spec, estimators, run_seed, cfg.dump_per_sample)?;
            if let Some(ev) = it_eval.as_ref().or(gl_eval.as_ref()) {
                let clean = split.test.labels();
                let correct = ev
                    .predictions
                    .iter()
                    .zip(clean)
                    .filter(|(p, l)| p == l)
                    .count();
                record.clean_accuracy = Some(correct as f64 / clean.len() as f64);
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    sort_records(&mut records);
    Ok(records)
}

/// Remaps test labels after a class was cut out of training: surviving
/// classes compact downward, held-out rows get the out-of-range sentinel
/// `class_count - 1` of the original label space so no prediction can
/// match them.
fn ood_eval_labels(test: &Dataset, excluded: usize) -> Vec<usize> {
    test.labels()
        .iter()
        .map(|&l| {
            if l == excluded {
                test.class_count() - 1
            } else if l > excluded {
                l - 1
            } else {
                l
            }
        })
        .collect()
}

/// Leave-one-class-out sweep: each class in turn is dropped from training
/// and the per-sample uncertainties on the full test set are kept for
/// detection scoring. The record's accuracy covers only in-distribution
/// test rows; mean uncertainties cover all rows. Needs at least three
/// classes so training remains a classification problem.
pub fn run_ood(
    cfg: &ExperimentConfig,
    dataset: &DatasetSpec,
    variant: Variant,
    estimators: EstimatorSet,
) -> Result<(Vec<RunRecord>, Vec<OodScores>)> {
    cfg.validate()?;
    let kind = ExperimentKind::Ood;
    let class_count = dataset
        .materialize(seed::derive(cfg.master_seed, &[kind.stream(), 0, 0]))?
        .train
        .class_count();
    if class_count < 3 {
        return Err(Error::Config(format!(
            "leave-one-class-out needs at least 3 classes, {} has {}",
            dataset.name(),
            class_count
        )));
    }
    let jobs: Vec<(usize, usize)> = (0..class_count)
        .flat_map(|c| (0..cfg.repetitions).map(move |rep| (c, rep)))
        .collect();
    let mut outcomes = jobs
        .into_par_iter()
        .map(|(class, rep)| -> Result<(RunRecord, Option<OodScores>)> {
            let split_seed = seed::derive(cfg.master_seed, &[kind.stream(), 0, rep as u64]);
            let split = dataset.materialize(split_seed)?;
            let run_seed = seed::derive(
                cfg.master_seed,
                &[kind.stream(), 1, rep as u64, (class as f64).to_bits()],
            );
            let (train, test, ood_mask) = leave_one_class_out(&split, class)?;
            let eval_labels = ood_eval_labels(&test, class);
            let arch = dataset.arch(class_count - 1);
            let spec = FitSpec {
                arch: &arch,
                variant,
                train_x: train.features(),
                train_labels: train.labels(),
                test_x: test.features(),
                test_labels: &eval_labels,
                epochs: cfg.base_epochs,
                batch_size: cfg.batch_size.unwrap_or_else(|| dataset.default_batch_size()),
                learning_rate: cfg.learning_rate,
                passes: cfg.passes,
                n_eval: cfg.n_eval,
            };
            let mut record = RunRecord::pending(kind, class as f64, rep, run_seed);
            let (it_eval, gl_eval) =
                run_estimators(&mut record, &spec, estimators, run_seed, cfg.dump_per_sample)?;
            // Rescore accuracy on in-distribution rows only; held-out rows
            // have no reachable label.
            let id_accuracy = |ev: &Evaluation| {
                let (mut correct, mut total) = (0usize, 0usize);
                for (b, &is_ood) in ood_mask.iter().enumerate() {
                    if !is_ood {
                        total += 1;
                        correct += usize::from(ev.predictions[b] == eval_labels[b]);
                    }
                }
                correct as f64 / total as f64
            };
            record.it_accuracy = it_eval.as_ref().map(&id_accuracy);
            record.gl_accuracy = gl_eval.as_ref().map(&id_accuracy);
            let to_scores = |ev: Option<Evaluation>| {
                ev.map(|e| SampleScores { au: e.au, eu: e.eu })
            };
            let scores = if it_eval.is_some() || gl_eval.is_some() {
                Some(OodScores {
                    class,
                    rep,
                    seed: run_seed,
                    ood_mask,
                    it: to_scores(it_eval),
                    gl: to_scores(gl_eval),
                })
            } else {
                None
            };
            Ok((record, scores))
        })
        .collect::<Result<Vec<_>>>()?;
    outcomes.sort_by(|(a, _), (b, _)| {
        a.condition
            .total_cmp(&b.condition)
            .then(a.rep.cmp(&b.rep))
    });
    let mut records = Vec::with_capacity(outcomes.len());
    let mut scores = Vec::new();
    for (record, s) in outcomes {
        records.push(record);
        if let Some(s) = s {
            scores.push(s);
        }
    }
    Ok((records, scores))
}
