//! The three subcommands: experiment runs, feature-space grids, and the
//! disentanglement report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use uqbench::bayes::{epochs_for, train_stochastic, Head, StochasticModel};
use uqbench::experiments::{
    per_rep_pcc, run_dataset_size, run_label_noise, run_ood, runs_csv_string, uncertainty_grid,
    EstimatorKind, EstimatorSet, ExperimentConfig, GridBounds, RunRecord,
};
use uqbench::metrics::{ci95, disentanglement_error, roc_auc};
use uqbench::nn::TrainConfig;
use uqbench::{seed, Error, Result};

use crate::config::{DatasetName, ModelName, Settings};
use crate::output::{grid_csv, grid_pgm, OutputLayout};

/// Which experiments one `run` invocation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum RunTarget {
    DatasetSize,
    LabelNoise,
    Ood,
    All,
}

impl RunTarget {
    fn label(&self) -> &'static str {
        match self {
            RunTarget::DatasetSize => "dataset-size",
            RunTarget::LabelNoise => "label-noise",
            RunTarget::Ood => "ood",
            RunTarget::All => "all",
        }
    }
}

/// What a run produced, for exit-code selection and messaging.
#[derive(Debug)]
pub struct RunOutcome {
    pub root: PathBuf,
    /// Cells whose training diverged; their rows are marked in runs.csv.
    pub failed_cells: usize,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Runs `body` inside a bounded rayon pool when `jobs` > 0.
fn with_pool<T: Send>(jobs: usize, body: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if jobs == 0 {
        return body();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build {jobs}-thread pool: {e}")))?;
    pool.install(body)
}

fn render_manifest(command: &str, settings: &Settings) -> String {
    let mut out = String::from("# uqbench manifest; replay with --config <this file>\n[meta]\n");
    let _ = writeln!(out, "tool = uqbench {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "command = {command}");
    out.push_str(&settings.manifest_section());
    out
}

fn append_pcc_rows(
    out: &mut String,
    dataset: &str,
    model: &str,
    experiment: &str,
    records: &[RunRecord],
    estimators: EstimatorSet,
) {
    for kind in [EstimatorKind::It, EstimatorKind::Gl] {
        let wanted = match kind {
            EstimatorKind::It => estimators.wants_it(),
            EstimatorKind::Gl => estimators.wants_gl(),
        };
        if !wanted {
            continue;
        }
        for row in per_rep_pcc(records, kind) {
            let _ = writeln!(
                out,
                "{dataset},{model},{},{experiment},{},{},{}",
                kind.name(),
                row.rep,
                opt_cell(row.pcc_au),
                opt_cell(row.pcc_eu),
            );
        }
    }
}

fn per_sample_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("condition,rep,sample,it_au,it_eu,gl_au,gl_eu\n");
    for r in records {
        let Some(dump) = &r.per_sample else { continue };
        let n = dump
            .it
            .as_ref()
            .or(dump.gl.as_ref())
            .map_or(0, |s| s.au.len());
        for b in 0..n {
            let chan = |s: &Option<uqbench::experiments::SampleScores>, eu: bool| {
                opt_cell(s.as_ref().map(|s| if eu { s.eu[b] } else { s.au[b] }))
            };
            let _ = writeln!(
                out,
                "{},{},{b},{},{},{},{}",
                r.condition,
                r.rep,
                chan(&dump.it, false),
                chan(&dump.it, true),
                chan(&dump.gl, false),
                chan(&dump.gl, true),
            );
        }
    }
    out
}

struct SweepCtx<'a> {
    layout: &'a OutputLayout,
    cfg: &'a ExperimentConfig,
    settings: &'a Settings,
    dataset_name: &'a str,
}

impl SweepCtx<'_> {
    fn write_model_files(
        &self,
        experiment_dir: &str,
        model: ModelName,
        records: &[RunRecord],
    ) -> Result<usize> {
        let base = PathBuf::from(experiment_dir).join(model.name());
        let path = self.layout.write(&base.join("runs.csv"), &runs_csv_string(records))?;
        println!("wrote {}", path.display());
        if self.cfg.dump_per_sample {
            self.layout
                .write(&base.join("per_sample.csv"), &per_sample_csv(records))?;
        }
        Ok(records.iter().filter(|r| r.failed).count())
    }

    fn variant_for(&self, model: ModelName) -> uqbench::bayes::Variant {
        model.to_variant(self.settings.rate, self.settings.members)
    }
}

type SweepFn = fn(
    &ExperimentConfig,
    &uqbench::experiments::DatasetSpec,
    uqbench::bayes::Variant,
    EstimatorSet,
) -> Result<Vec<RunRecord>>;

fn sweep_correlation_experiment(ctx: &SweepCtx<'_>, target: RunTarget) -> Result<usize> {
    let (dir, runner): (&str, SweepFn) = match target {
        RunTarget::DatasetSize => ("dataset_size", run_dataset_size),
        RunTarget::LabelNoise => ("label_noise", run_label_noise),
        _ => unreachable!("only the correlation sweeps use this path"),
    };
    let spec = ctx.settings.dataset_spec();
    let mut failed = 0;
    let mut pcc = String::from("dataset,model,estimator,experiment,rep,pcc_au,pcc_eu\n");
    for &model in &ctx.settings.models {
        let records = runner(ctx.cfg, &spec, ctx.variant_for(model), ctx.settings.estimator)?;
        failed += ctx.write_model_files(dir, model, &records)?;
        append_pcc_rows(
            &mut pcc,
            ctx.dataset_name,
            model.name(),
            dir,
            &records,
            ctx.settings.estimator,
        );
    }
    let path = ctx.layout.write(&PathBuf::from(dir).join("pcc.csv"), &pcc)?;
    println!("wrote {}", path.display());
    Ok(failed)
}

fn sweep_ood_experiment(ctx: &SweepCtx<'_>) -> Result<usize> {
    let spec = ctx.settings.dataset_spec();
    let mut failed = 0;
    let mut auc = String::from("dataset,model,estimator,class,rep,auc_au,auc_eu\n");
    for &model in &ctx.settings.models {
        let (records, scores) =
            run_ood(ctx.cfg, &spec, ctx.variant_for(model), ctx.settings.estimator)?;
        failed += ctx.write_model_files("ood", model, &records)?;
        for s in &scores {
            let channels = [
                (EstimatorKind::It, s.it.as_ref()),
                (EstimatorKind::Gl, s.gl.as_ref()),
            ];
            for (kind, chan) in channels {
                let Some(chan) = chan else { continue };
                let _ = writeln!(
                    auc,
                    "{},{},{},{},{},{},{}",
                    ctx.dataset_name,
                    model.name(),
                    kind.name(),
                    s.class,
                    s.rep,
                    roc_auc(&chan.au, &s.ood_mask)?,
                    roc_auc(&chan.eu, &s.ood_mask)?,
                );
            }
        }
    }
    let path = ctx.layout.write(Path::new("ood/ood_auc.csv"), &auc)?;
    println!("wrote {}", path.display());
    Ok(failed)
}

pub fn cmd_run(
    target: RunTarget,
    settings: &Settings,
    out: &Path,
    overwrite: bool,
) -> Result<RunOutcome> {
    settings.validate()?;
    if settings.dataset == DatasetName::Wine && !settings.wine_path.is_file() {
        return Err(Error::Schema {
            source_name: settings.wine_path.display().to_string(),
            row: 0,
            detail: "wine CSV not found".into(),
        });
    }
    let layout = OutputLayout::prepare(out, overwrite)?;
    layout.write(Path::new("manifest.txt"), &render_manifest(&format!("run {}", target.label()), settings))?;
    let cfg = settings.experiment_config();
    let ctx = SweepCtx {
        layout: &layout,
        cfg: &cfg,
        settings,
        dataset_name: settings.dataset.name(),
    };
    let failed = with_pool(settings.jobs, || {
        let mut failed = 0;
        if matches!(target, RunTarget::DatasetSize | RunTarget::All) {
            failed += sweep_correlation_experiment(&ctx, RunTarget::DatasetSize)?;
        }
        if matches!(target, RunTarget::LabelNoise | RunTarget::All) {
            failed += sweep_correlation_experiment(&ctx, RunTarget::LabelNoise)?;
        }
        if matches!(target, RunTarget::Ood | RunTarget::All) {
            // `all` quietly skips leave-one-class-out for binary datasets;
            // asking for it explicitly is an error.
            let class_count = ctx
                .settings
                .dataset_spec()
                .materialize(seed::derive(cfg.master_seed, &[3, 0, 0]))?
                .train
                .class_count();
            if class_count >= 3 {
                failed += sweep_ood_experiment(&ctx)?;
            } else if target == RunTarget::Ood {
                return Err(Error::Config(format!(
                    "leave-one-class-out needs at least 3 classes, {} has {class_count}",
                    ctx.dataset_name
                )));
            } else {
                println!(
                    "note: skipping ood ({} has {class_count} classes, need 3)",
                    ctx.dataset_name
                );
            }
        }
        Ok(failed)
    })?;
    Ok(RunOutcome {
        root: layout.root().to_path_buf(),
        failed_cells: failed,
    })
}

pub fn cmd_grid(settings: &Settings, out: &Path, overwrite: bool) -> Result<PathBuf> {
    settings.validate()?;
    let spec = settings.dataset_spec();
    if !spec.is_planar() {
        return Err(Error::Config(format!(
            "grid rendering needs a 2-D dataset, not {}",
            spec.name()
        )));
    }
    let [model] = settings.models.as_slice() else {
        return Err(Error::Config(
            "grid rendering takes exactly one --model".into(),
        ));
    };
    if settings.grid_resolution < 2 {
        return Err(Error::Config("grid resolution must be at least 2".into()));
    }
    let layout = OutputLayout::prepare(out, overwrite)?;
    layout.write(Path::new("manifest.txt"), &render_manifest("grid", settings))?;
    // Stream 4 keeps grid randomness apart from the three experiments.
    let split_seed = seed::derive(settings.seed, &[4, 0, 0]);
    let run_seed = seed::derive(settings.seed, &[4, 1, 0]);
    let split = spec.materialize(split_seed)?;
    let bounds = match settings.grid_bounds {
        Some([x_min, x_max, y_min, y_max]) => GridBounds {
            x_min,
            x_max,
            y_min,
            y_max,
        },
        None => GridBounds::around(split.train.features(), 0.5)?,
    };
    let variant = model.to_variant(settings.rate, settings.members);
    let arch = spec.arch(split.train.class_count());
    let channels = [
        (EstimatorKind::It, Head::Softmax, 3u64, 5u64),
        (EstimatorKind::Gl, Head::GaussianLogits, 4, 6),
    ];
    for (kind, head, train_stream, eval_stream) in channels {
        let wanted = match kind {
            EstimatorKind::It => settings.estimator.wants_it(),
            EstimatorKind::Gl => settings.estimator.wants_gl(),
        };
        if !wanted {
            continue;
        }
        let train_seed = seed::derive(run_seed, &[train_stream]);
        let mut net = StochasticModel::new(
            &arch,
            variant,
            head,
            settings.t_passes,
            seed::derive(train_seed, &[0]),
        )?;
        let cfg = TrainConfig {
            epochs: epochs_for(variant, settings.epochs),
            batch_size: settings.batch_size.unwrap_or_else(|| spec.default_batch_size()),
            learning_rate: settings.learning_rate,
            seed: seed::derive(train_seed, &[1]),
        };
        train_stochastic(&mut net, split.train.features(), split.train.labels(), &cfg)?;
        let grid = uncertainty_grid(
            &net,
            bounds,
            settings.grid_resolution,
            settings.t_passes,
            settings.n_eval,
            seed::derive(run_seed, &[eval_stream]),
        )?;
        let base = format!("grid_{}", kind.name());
        let path = layout.write(Path::new(&format!("{base}.csv")), &grid_csv(&grid))?;
        println!("wrote {}", path.display());
        for channel in ["au", "eu"] {
            let pgm = grid_pgm(&grid, channel)?;
            let path = layout.write(Path::new(&format!("{base}_{channel}.pgm")), &pgm)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(layout.root().to_path_buf())
}

/// One parsed pcc.csv row.
#[derive(Debug, Clone)]
struct PccEntry {
    dataset: String,
    model: String,
    estimator: String,
    rep: usize,
    pcc_au: Option<f64>,
    pcc_eu: Option<f64>,
}

const PCC_HEADER: &str = "dataset,model,estimator,experiment,rep,pcc_au,pcc_eu";

fn parse_pcc_csv(text: &str, source: &str) -> Result<Vec<PccEntry>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == PCC_HEADER => {}
        other => {
            return Err(Error::Schema {
                source_name: source.into(),
                row: 1,
                detail: format!("expected header '{PCC_HEADER}', got {other:?}"),
            })
        }
    }
    let mut entries = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Schema {
                source_name: source.into(),
                row,
                detail: format!("expected 7 fields, got {}", fields.len()),
            });
        }
        let float_cell = |s: &str, what: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|_| Error::Schema {
                source_name: source.into(),
                row,
                detail: format!("invalid {what} '{s}'"),
            })
        };
        entries.push(PccEntry {
            dataset: fields[0].to_string(),
            model: fields[1].to_string(),
            estimator: fields[2].to_string(),
            rep: fields[4].parse().map_err(|_| Error::Schema {
                source_name: source.into(),
                row,
                detail: format!("invalid rep '{}'", fields[4]),
            })?,
            pcc_au: float_cell(fields[5], "pcc_au")?,
            pcc_eu: float_cell(fields[6], "pcc_eu")?,
        });
    }
    Ok(entries)
}

#[derive(Debug, Clone)]
struct LeaderRow {
    dataset: String,
    model: String,
    estimator: String,
    de_mean: f64,
    de_sum: f64,
    ci95_halfwidth: Option<f64>,
    reps: usize,
}

/// Joins the two experiments' correlations per (dataset, model, estimator,
/// rep) and scores them, ascending by normalized error.
fn build_leaderboard(
    size: &[PccEntry],
    noise: &[PccEntry],
    warnings: &mut Vec<String>,
) -> Result<Vec<LeaderRow>> {
    type Key = (String, String, String);
    let index = |entries: &[PccEntry]| -> BTreeMap<(Key, usize), (f64, f64)> {
        entries
            .iter()
            .filter_map(|e| {
                let (Some(au), Some(eu)) = (e.pcc_au, e.pcc_eu) else {
                    return None;
                };
                let key = (e.dataset.clone(), e.model.clone(), e.estimator.clone());
                Some(((key, e.rep), (au, eu)))
            })
            .collect()
    };
    let size_idx = index(size);
    let noise_idx = index(noise);
    let mut grouped: BTreeMap<Key, Vec<(f64, f64)>> = BTreeMap::new();
    for ((key, rep), &(s_au, s_eu)) in &size_idx {
        let Some(&(n_au, n_eu)) = noise_idx.get(&(key.clone(), *rep)) else {
            continue;
        };
        let de = disentanglement_error(s_au, s_eu, n_au, n_eu)?;
        grouped.entry(key.clone()).or_default().push((de.de_mean, de.de_sum));
    }
    if grouped.is_empty() {
        return Err(Error::Config(
            "no (dataset, model, estimator, rep) cell appears in both pcc files".into(),
        ));
    }
    let mut rows = Vec::with_capacity(grouped.len());
    for ((dataset, model, estimator), scores) in grouped {
        let n = scores.len() as f64;
        let means: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let ci = if means.len() >= 2 {
            Some(ci95(&means)?.ci95_halfwidth)
        } else {
            warnings.push(format!(
                "{dataset}/{model}/{estimator}: single repetition, no confidence interval"
            ));
            None
        };
        rows.push(LeaderRow {
            dataset,
            model,
            estimator,
            de_mean: means.iter().sum::<f64>() / n,
            de_sum: scores.iter().map(|s| s.1).sum::<f64>() / n,
            ci95_halfwidth: ci,
            reps: scores.len(),
        });
    }
    rows.sort_by(|a, b| {
        a.de_mean
            .total_cmp(&b.de_mean)
            .then_with(|| a.dataset.cmp(&b.dataset))
            .then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.estimator.cmp(&b.estimator))
    });
    Ok(rows)
}

fn leaderboard_csv(rows: &[LeaderRow]) -> String {
    let mut out = String::from("dataset,model,estimator,de_mean,de_sum,ci95\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.estimator,
            r.de_mean,
            r.de_sum,
            opt_cell(r.ci95_halfwidth),
        );
    }
    out
}

fn leaderboard_text(rows: &[LeaderRow]) -> String {
    let mut out = String::from("Disentanglement error, lower is better (* best, + second):\n");
    for (i, r) in rows.iter().enumerate() {
        let marker = match i {
            0 => '*',
            1 => '+',
            _ => ' ',
        };
        let ci = r
            .ci95_halfwidth
            .map(|h| format!(" +-{h:.3}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            " {marker} {:<12} {:<14} {:<4} de_mean {:.3}{ci}  de_sum {:.3}  ({} reps)",
            r.dataset, r.model, r.estimator, r.de_mean, r.de_sum, r.reps
        );
    }
    out
}

fn read_pcc_file(root: &Path, experiment: &str, command_hint: &str) -> Result<Vec<PccEntry>> {
    let path = root.join(experiment).join("pcc.csv");
    if !path.is_file() {
        return Err(Error::Config(format!(
            "no {experiment} correlations under {}; run `uqbench run {command_hint}` (or `run all`) first",
            root.display()
        )));
    }
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_pcc_csv(&text, &path.display().to_string())
}

pub fn cmd_report(run_root: &Path) -> Result<PathBuf> {
    if !run_root.is_dir() {
        return Err(Error::Config(format!(
            "run root {} does not exist",
            run_root.display()
        )));
    }
    let size = read_pcc_file(run_root, "dataset_size", "dataset-size")?;
    let noise = read_pcc_file(run_root, "label_noise", "label-noise")?;
    let mut warnings = Vec::new();
    let rows = build_leaderboard(&size, &noise, &mut warnings)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let path = run_root.join("de_leaderboard.csv");
    std::fs::write(&path, leaderboard_csv(&rows))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    print!("{}", leaderboard_text(&rows));
    println!("wrote {}", path.display());
    Ok(path)
}
