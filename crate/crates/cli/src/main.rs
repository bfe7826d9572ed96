//! `uqbench`: train small stochastic classifiers, disentangle their
//! aleatoric and epistemic uncertainty, and score how well the split tracks
//! controlled data effects.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or schema
//! error, 3 finished but some training cells diverged.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uqbench::{Error, Result};

mod commands;
mod config;
mod output;

use commands::{cmd_grid, cmd_report, cmd_run, RunTarget};
use config::{ConfigFile, DatasetName, EstimatorName, ModelName, Settings};

#[derive(Parser)]
#[command(
    name = "uqbench",
    version,
    about = "Uncertainty disentanglement benchmark for stochastic MLP classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run controlled experiments and write per-cell CSVs.
    Run {
        /// Which sweep to run; `all` covers every applicable one.
        #[arg(value_enum)]
        experiment: RunTarget,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Rasterize uncertainty over a 2-D feature window (CSV and PGM).
    Grid {
        #[command(flatten)]
        common: CommonArgs,
        /// Lattice points per axis.
        #[arg(long)]
        resolution: Option<usize>,
        /// Evaluation window as `x_min,x_max,y_min,y_max`; defaults to the
        /// training bounding box plus a 50% margin.
        #[arg(long)]
        bounds: Option<String>,
    },
    /// Aggregate a finished run into a disentanglement-error leaderboard.
    Report {
        /// Run directory containing `dataset_size/` and `label_noise/`.
        run_root: PathBuf,
    },
}

/// Flags shared by `run` and `grid`. Everything is optional; values come
/// from defaults, then `--config`, then these flags.
#[derive(Args)]
struct CommonArgs {
    /// Config file (or a manifest from a previous run) to start from.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, value_enum)]
    dataset: Option<DatasetName>,

    /// Path of the wine CSV, used when --dataset wine.
    #[arg(long)]
    wine_path: Option<PathBuf>,

    /// Models to benchmark; repeat or separate with commas.
    #[arg(long, value_enum, value_delimiter = ',')]
    model: Vec<ModelName>,

    #[arg(long, value_enum)]
    estimator: Option<EstimatorName>,

    /// Training-set fractions for the dataset-size sweep, comma separated.
    #[arg(long)]
    fractions: Option<String>,

    /// Label corruption levels for the noise sweep, comma separated.
    #[arg(long)]
    noise_levels: Option<String>,

    /// Repetitions per experimental cell.
    #[arg(long)]
    reps: Option<usize>,

    /// Epoch budget at fraction 1.0.
    #[arg(long)]
    epochs: Option<usize>,

    /// Stochastic forward passes per prediction.
    #[arg(long)]
    t_passes: Option<usize>,

    /// Monte Carlo draws for Gaussian-logit probabilities.
    #[arg(long)]
    n_eval: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    batch_size: Option<usize>,

    #[arg(long)]
    learning_rate: Option<f64>,

    /// Drop probability for MC-Dropout and MC-DropConnect.
    #[arg(long)]
    rate: Option<f64>,

    /// Member count for deep ensembles.
    #[arg(long)]
    members: Option<usize>,

    /// Also write per-sample uncertainty CSVs.
    #[arg(long)]
    dump_per_sample: bool,

    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,

    /// Output root; each invocation gets a fresh timestamped subdirectory.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Write into --out directly instead of a timestamped subdirectory.
    #[arg(long)]
    overwrite: bool,
}

impl CommonArgs {
    /// Defaults, then the config file, then explicit flags.
    fn build_settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            ConfigFile::load(path)?.apply(&mut s, &path.display().to_string())?;
        }
        if let Some(v) = self.dataset {
            s.dataset = v;
        }
        if let Some(v) = &self.wine_path {
            s.wine_path = v.clone();
        }
        if !self.model.is_empty() {
            s.models = self.model.clone();
        }
        if let Some(v) = self.estimator {
            s.estimator = v.to_set();
        }
        if let Some(v) = &self.fractions {
            s.fractions = config::parse_float_list(v)
                .map_err(|e| Error::Config(format!("--fractions: {e}")))?;
        }
        if let Some(v) = &self.noise_levels {
            s.noise_levels = config::parse_float_list(v)
                .map_err(|e| Error::Config(format!("--noise-levels: {e}")))?;
        }
        if let Some(v) = self.reps {
            s.reps = v;
        }
        if let Some(v) = self.epochs {
            s.epochs = v;
        }
        if let Some(v) = self.t_passes {
            s.t_passes = v;
        }
        if let Some(v) = self.n_eval {
            s.n_eval = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = Some(v);
        }
        if let Some(v) = self.learning_rate {
            s.learning_rate = v;
        }
        if let Some(v) = self.rate {
            s.rate = v;
        }
        if let Some(v) = self.members {
            s.members = v;
        }
        if self.dump_per_sample {
            s.dump_per_sample = true;
        }
        if let Some(v) = self.jobs {
            s.jobs = v;
        }
        Ok(s)
    }

    fn out(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn parse_bounds(text: &str) -> Result<[f64; 4]> {
    let values = config::parse_float_list(text)
        .map_err(|e| Error::Config(format!("--bounds: {e}")))?;
    values
        .try_into()
        .map_err(|_| Error::Config("--bounds needs exactly 4 values".into()))
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { experiment, common } => {
            let settings = common.build_settings()?;
            let outcome = cmd_run(experiment, &settings, &common.out(), common.overwrite)?;
            println!("run complete: {}", outcome.root.display());
            if outcome.failed_cells > 0 {
                eprintln!(
                    "warning: {} cell(s) failed training; rows are marked failed=true",
                    outcome.failed_cells
                );
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Grid {
            common,
            resolution,
            bounds,
        } => {
            let mut settings = common.build_settings()?;
            if let Some(r) = resolution {
                settings.grid_resolution = r;
            }
            if let Some(b) = &bounds {
                settings.grid_bounds = Some(parse_bounds(b)?);
            }
            let root = cmd_grid(&settings, &common.out(), common.overwrite)?;
            println!("grid complete: {}", root.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_root } => {
            cmd_report(&run_root)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Schema { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
