//! Flat key=value configuration with `[section]` headers, shared by config
//! files and run manifests. Command-line flags override file values; the
//! manifest a run writes is itself a valid config, so replaying a run is
//! `--config <manifest>`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use uqbench::experiments::{DatasetSpec, EstimatorSet, ExperimentConfig};
use uqbench::{bayes::Variant, Error, Result};

/// Dataset families the CLI can name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DatasetName {
    #[value(name = "two_moons")]
    TwoMoons,
    Triangles,
    Wine,
}

impl DatasetName {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetName::TwoMoons => "two_moons",
            DatasetName::Triangles => "triangles",
            DatasetName::Wine => "wine",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(DatasetName::TwoMoons),
            "triangles" => Ok(DatasetName::Triangles),
            "wine" => Ok(DatasetName::Wine),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }
}

/// Model variants the CLI can name; parameters come from the settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelName {
    #[value(name = "mc_dropout")]
    McDropout,
    #[value(name = "mc_dropconnect")]
    McDropconnect,
    Flipout,
    #[value(name = "deep_ensemble")]
    DeepEnsemble,
}

impl ModelName {
    pub fn name(&self) -> &'static str {
        match self {
            ModelName::McDropout => "mc_dropout",
            ModelName::McDropconnect => "mc_dropconnect",
            ModelName::Flipout => "flipout",
            ModelName::DeepEnsemble => "deep_ensemble",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "mc_dropout" => Ok(ModelName::McDropout),
            "mc_dropconnect" => Ok(ModelName::McDropconnect),
            "flipout" => Ok(ModelName::Flipout),
            "deep_ensemble" => Ok(ModelName::DeepEnsemble),
            other => Err(Error::Config(format!("unknown model '{other}'"))),
        }
    }

    pub fn to_variant(self, rate: f64, members: usize) -> Variant {
        match self {
            ModelName::McDropout => Variant::McDropout { rate },
            ModelName::McDropconnect => Variant::McDropConnect { rate },
            ModelName::Flipout => Variant::Flipout,
            ModelName::DeepEnsemble => Variant::DeepEnsemble { members },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EstimatorName {
    It,
    Gl,
    Both,
}

impl EstimatorName {
    pub fn to_set(self) -> EstimatorSet {
        match self {
            EstimatorName::It => EstimatorSet::It,
            EstimatorName::Gl => EstimatorSet::Gl,
            EstimatorName::Both => EstimatorSet::Both,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "it" => Ok(EstimatorName::It),
            "gl" => Ok(EstimatorName::Gl),
            "both" => Ok(EstimatorName::Both),
            other => Err(Error::Config(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Everything a run or grid command needs, after merging defaults, config
/// file, and flags.
#[derive(Debug, Clone)]
pub struct Settings {
    pub dataset: DatasetName,
    pub wine_path: PathBuf,
    pub models: Vec<ModelName>,
    pub estimator: EstimatorSet,
    pub fractions: Vec<f64>,
    pub noise_levels: Vec<f64>,
    pub reps: usize,
    pub epochs: usize,
    pub t_passes: usize,
    pub n_eval: usize,
    pub seed: u64,
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    /// Drop probability for MC-Dropout and MC-DropConnect.
    pub rate: f64,
    /// Member count for deep ensembles.
    pub members: usize,
    pub dump_per_sample: bool,
    /// Worker threads; 0 means one per core.
    pub jobs: usize,
    /// Lattice resolution for the grid command.
    pub grid_resolution: usize,
    /// Explicit grid window `x_min,x_max,y_min,y_max`; None derives the
    /// training bounding box plus a 50% margin.
    pub grid_bounds: Option<[f64; 4]>,
}

impl Default for Settings {
    fn default() -> Self {
        let exp = ExperimentConfig::default();
        Settings {
            dataset: DatasetName::TwoMoons,
            wine_path: PathBuf::from("data/wine.csv"),
            models: vec![ModelName::McDropout],
            estimator: EstimatorSet::Both,
            fractions: exp.fractions,
            noise_levels: exp.noise_levels,
            reps: exp.repetitions,
            epochs: exp.base_epochs,
            t_passes: exp.passes,
            n_eval: exp.n_eval,
            seed: 0,
            batch_size: None,
            learning_rate: exp.learning_rate,
            rate: 0.3,
            members: 10,
            dump_per_sample: false,
            jobs: 0,
            grid_resolution: 64,
            grid_bounds: None,
        }
    }
}

impl Settings {
    pub fn dataset_spec(&self) -> DatasetSpec {
        match self.dataset {
            DatasetName::TwoMoons => DatasetSpec::two_moons(),
            DatasetName::Triangles => DatasetSpec::triangles(),
            DatasetName::Wine => DatasetSpec::wine(self.wine_path.clone()),
        }
    }

    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            fractions: self.fractions.clone(),
            noise_levels: self.noise_levels.clone(),
            base_epochs: self.epochs,
            repetitions: self.reps,
            passes: self.t_passes,
            n_eval: self.n_eval,
            master_seed: self.seed,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            dump_per_sample: self.dump_per_sample,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Config("no model selected".into()));
        }
        if !(0.0..1.0).contains(&self.rate) {
            return Err(Error::Config(format!(
                "drop rate {} outside [0, 1)",
                self.rate
            )));
        }
        if self.members == 0 {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        self.experiment_config().validate()
    }

    /// Renders the `[run]` section of a manifest. Keys match config keys,
    /// so the manifest replays through `--config`.
    pub fn manifest_section(&self) -> String {
        let mut out = String::from("[run]\n");
        let _ = writeln!(out, "dataset = {}", self.dataset.name());
        if self.dataset == DatasetName::Wine {
            let _ = writeln!(out, "wine-path = {}", self.wine_path.display());
        }
        let _ = writeln!(out, "model = {}", join_names(&self.models));
        let _ = writeln!(
            out,
            "estimator = {}",
            match self.estimator {
                EstimatorSet::It => "it",
                EstimatorSet::Gl => "gl",
                EstimatorSet::Both => "both",
            }
        );
        let _ = writeln!(out, "fractions = {}", join_floats(&self.fractions));
        let _ = writeln!(out, "noise-levels = {}", join_floats(&self.noise_levels));
        let _ = writeln!(out, "reps = {}", self.reps);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "t-passes = {}", self.t_passes);
        let _ = writeln!(out, "n-eval = {}", self.n_eval);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(b) = self.batch_size {
            let _ = writeln!(out, "batch-size = {b}");
        }
        let _ = writeln!(out, "learning-rate = {}", self.learning_rate);
        let _ = writeln!(out, "rate = {}", self.rate);
        let _ = writeln!(out, "members = {}", self.members);
        let _ = writeln!(out, "dump-per-sample = {}", self.dump_per_sample);
        let _ = writeln!(out, "jobs = {}", self.jobs);
        let _ = writeln!(out, "grid-resolution = {}", self.grid_resolution);
        if let Some(b) = self.grid_bounds {
            let _ = writeln!(out, "grid-bounds = {}", join_floats(&b));
        }
        out
    }
}

fn join_names(models: &[ModelName]) -> String {
    models
        .iter()
        .map(|m| m.name())
        .collect::<Vec<_>>()
        .join(",")
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Raw parsed config: section -> key -> (line number, value).
#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, (usize, String)>>,
}

impl ConfigFile {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut file = ConfigFile::default();
        let mut section = String::from("run");
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(Error::Config(format!(
                        "{source}:{line_no}: unterminated section header '{line}'"
                    )));
                };
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "{source}:{line_no}: expected 'key = value', got '{line}'"
                )));
            };
            file.sections
                .entry(section.clone())
                .or_default()
                .insert(key.trim().to_string(), (line_no, value.trim().to_string()));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn run_entries(&self) -> impl Iterator<Item = (&String, &(usize, String))> {
        self.sections
            .get("run")
            .into_iter()
            .flat_map(|kv| kv.iter())
    }

    /// Folds `[run]` keys into the settings. Unknown keys and sections other
    /// than `run`/`meta` are errors with the offending line number.
    pub fn apply(&self, settings: &mut Settings, source: &str) -> Result<()> {
        for name in self.sections.keys() {
            if name != "run" && name != "meta" {
                return Err(Error::Config(format!(
                    "{source}: unknown section '[{name}]'"
                )));
            }
        }
        for (key, (line_no, value)) in self.run_entries() {
            let fail = |detail: String| {
                Error::Config(format!("{source}:{line_no}: {detail}"))
            };
            match key.as_str() {
                "dataset" => settings.dataset = DatasetName::parse(value).map_err(|e| fail(e.to_string()))?,
                "wine-path" => settings.wine_path = PathBuf::from(value),
                "model" => {
                    settings.models = value
                        .split(',')
                        .map(|m| ModelName::parse(m.trim()))
                        .collect::<Result<_>>()
                        .map_err(|e| fail(e.to_string()))?;
                }
                "estimator" => {
                    settings.estimator = EstimatorName::parse(value)
                        .map_err(|e| fail(e.to_string()))?
                        .to_set();
                }
                "fractions" => settings.fractions = parse_float_list(value).map_err(fail)?,
                "noise-levels" => settings.noise_levels = parse_float_list(value).map_err(fail)?,
                "reps" => settings.reps = parse_num(value).map_err(fail)?,
                "epochs" => settings.epochs = parse_num(value).map_err(fail)?,
                "t-passes" => settings.t_passes = parse_num(value).map_err(fail)?,
                "n-eval" => settings.n_eval = parse_num(value).map_err(fail)?,
                "seed" => settings.seed = parse_num(value).map_err(fail)?,
                "batch-size" => settings.batch_size = Some(parse_num(value).map_err(fail)?),
                "learning-rate" => settings.learning_rate = parse_num(value).map_err(fail)?,
                "rate" => settings.rate = parse_num(value).map_err(fail)?,
                "members" => settings.members = parse_num(value).map_err(fail)?,
                "dump-per-sample" => {
                    settings.dump_per_sample = parse_bool(value).map_err(fail)?;
                }
                "jobs" => settings.jobs = parse_num(value).map_err(fail)?,
                "grid-resolution" => settings.grid_resolution = parse_num(value).map_err(fail)?,
                "grid-bounds" => {
                    let values = parse_float_list(value).map_err(&fail)?;
                    settings.grid_bounds = Some(values.try_into().map_err(|_| {
                        fail("grid-bounds needs exactly 4 values".into())
                    })?);
                }
                "experiment" => {} // informational in manifests
                other => return Err(fail(format!("unknown key '{other}'"))),
            }
        }
        Ok(())
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid number '{value}'"))
}

fn parse_bool(value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(format!("invalid boolean '{other}'")),
    }
}

pub fn parse_float_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| parse_num(v.trim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_manifest_section() {
        let mut settings = Settings {
            dataset: DatasetName::Wine,
            wine_path: PathBuf::from("x/wine.csv"),
            models: vec![ModelName::McDropout, ModelName::DeepEnsemble],
            estimator: EstimatorSet::Gl,
            fractions: vec![0.1, 1.0],
            noise_levels: vec![0.0, 0.5],
            reps: 2,
            epochs: 7,
            t_passes: 6,
            n_eval: 77,
            seed: 99,
            batch_size: Some(16),
            learning_rate: 0.002,
            rate: 0.25,
            members: 4,
            dump_per_sample: true,
            jobs: 3,
            grid_resolution: 5,
            grid_bounds: Some([-1.0, 2.0, -0.5, 1.5]),
        };
        let text = settings.manifest_section();
        let mut replayed = Settings::default();
        ConfigFile::parse(&text, "mem")
            .unwrap()
            .apply(&mut replayed, "mem")
            .unwrap();
        // Normalize the one field the manifest only writes for wine runs.
        settings.wine_path = replayed.wine_path.clone();
        assert_eq!(format!("{settings:?}"), format!("{replayed:?}"));
    }

    #[test]
    fn flags_style_defaults_pass_validation() {
        Settings::default().validate().unwrap();
    }

    #[test]
    fn unknown_key_reports_line_number() {
        let text = "[run]\nseed = 3\nbogus = 1\n";
        let cfg = ConfigFile::parse(text, "cfg.txt").unwrap();
        let err = cfg.apply(&mut Settings::default(), "cfg.txt").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg.txt:3"), "{msg}");
        assert!(msg.contains("bogus"), "{msg}");
    }

    #[test]
    fn unknown_section_and_bad_lines_are_rejected() {
        let bad_section = ConfigFile::parse("[nope]\nx = 1\n", "c").unwrap();
        assert!(bad_section.apply(&mut Settings::default(), "c").is_err());
        let bad_line = ConfigFile::parse("just words\n", "c");
        assert!(matches!(bad_line, Err(Error::Config(msg)) if msg.contains("c:1")));
    }

    #[test]
    fn comments_blank_lines_and_meta_are_ignored() {
        let text = "# comment\n\n[meta]\ntool = uqbench 0.1.0\ncreated = whenever\n[run]\nseed = 42\n";
        let cfg = ConfigFile::parse(text, "m").unwrap();
        let mut settings = Settings::default();
        cfg.apply(&mut settings, "m").unwrap();
        assert_eq!(settings.seed, 42);
    }

    #[test]
    fn float_lists_parse_and_reject_garbage() {
        assert_eq!(parse_float_list("0.1, 0.5,1.0").unwrap(), vec![0.1, 0.5, 1.0]);
        assert!(parse_float_list("0.1,zebra").is_err());
    }
}
