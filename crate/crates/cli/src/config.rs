//! Experiment configuration: one JSON or TOML file plus flag overrides.

use std::path::{Path, PathBuf};

use cmts_core::{CiTestConfig, PlantConfig};
use cmts_model::{Ablation, ModelConfig, TaskKind};
use cmts_train::{SampleConfig, TaskSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Raw CSV days, or manifest JSON files listing them. Empty means
    /// generate from `plant`.
    pub csv: Vec<PathBuf>,
    /// Prior graph JSON; the plant prior is used when the variables match it.
    pub prior: Option<PathBuf>,
    pub plant: PlantConfig,
    pub n_days: usize,
    /// Trailing share of days held out for the metrics in the run report.
    pub holdout_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            csv: Vec::new(),
            prior: None,
            plant: PlantConfig::default(),
            n_days: 30,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed. It replaces the generator and training seeds.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
    pub precision: Precision,
    pub data: DataConfig,
    pub tasks: Vec<TaskSpec>,
    pub sample: SampleConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub causal: CiTestConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            threads: None,
            out: PathBuf::from("runs/default"),
            precision: Precision::F32,
            data: DataConfig::default(),
            tasks: default_tasks(),
            sample: SampleConfig {
                l_fix: 96,
                ..Default::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            causal: CiTestConfig::default(),
        }
    }
}

pub fn default_tasks() -> Vec<TaskSpec> {
    TaskKind::ALL.iter().map(|&k| default_task(k)).collect()
}

/// Parameters sized for a 96-step day.
pub fn default_task(kind: TaskKind) -> TaskSpec {
    match kind {
        TaskKind::Imputation => TaskSpec::Imputation {
            mu: 16.0,
            sigma: 4.0,
            segments: 1,
        },
        TaskKind::Forecast => TaskSpec::Forecast { horizon: 24 },
        TaskKind::Superres => TaskSpec::Superres { factor: 3 },
    }
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub alpha: Option<f64>,
    pub ablation: Option<Ablation>,
    pub task: Option<TaskKind>,
    pub out: Option<PathBuf>,
    pub data: Vec<PathBuf>,
    pub prior: Option<PathBuf>,
}

/// Loaded configuration together with the hash identifying it.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub cfg: ExperimentConfig,
    pub hash: String,
}

fn parse(path: &Path, text: &str) -> Result<ExperimentConfig, CliError> {
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let res = if is_toml {
        toml::from_str(text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(text).map_err(|e| e.to_string())
    };
    res.map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Reads `path` (if any), applies `ov` and validates.
///
/// The hash covers the config file bytes and the overrides, so it changes
/// exactly when either does.
pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Loaded, CliError> {
    let mut hasher = Sha256::new();
    let mut cfg = match path {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| CliError::io(p, e))?;
            hasher.update(&bytes);
            let text = String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not UTF-8", p.display())))?;
            let mut cfg = parse(p, &text)?;
            // relative data paths are taken from the config's directory
            if let Some(dir) = p.parent() {
                for c in &mut cfg.data.csv {
                    if c.is_relative() {
                        *c = dir.join(&*c);
                    }
                }
                if let Some(pr) = &mut cfg.data.prior {
                    if pr.is_relative() {
                        *pr = dir.join(&*pr);
                    }
                }
            }
            cfg
        }
        None => ExperimentConfig::default(),
    };
    hasher.update(b"\0overrides\0");
    hasher.update(serde_json::to_vec(ov).expect("overrides serialize"));
    apply(&mut cfg, ov);
    validate(&cfg)?;
    Ok(Loaded {
        cfg,
        hash: hex::encode(hasher.finalize()),
    })
}

pub fn apply(cfg: &mut ExperimentConfig, ov: &Overrides) {
    if let Some(s) = ov.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = ov.threads {
        cfg.threads = Some(t);
    }
    if let Some(a) = ov.alpha {
        cfg.causal.alpha = a;
    }
    if let Some(a) = ov.ablation {
        cfg.model.ablation = a;
    }
    if let Some(k) = ov.task {
        let spec = cfg
            .tasks
            .iter()
            .find(|t| t.kind() == k)
            .cloned()
            .unwrap_or_else(|| default_task(k));
        cfg.tasks = vec![spec];
    }
    if let Some(o) = &ov.out {
        cfg.out = o.clone();
    }
    if !ov.data.is_empty() {
        cfg.data.csv = ov.data.clone();
    }
    if let Some(p) = &ov.prior {
        cfg.data.prior = Some(p.clone());
    }
    if let Some(s) = cfg.seed {
        cfg.data.plant.seed = s;
        cfg.train.seed = s;
    }
}

pub fn validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    if cfg.seed.is_none() {
        return Err(CliError::invalid("a seed is required (config `seed` or --seed)"));
    }
    if cfg.threads == Some(0) {
        return Err(CliError::invalid("--threads must be at least 1"));
    }
    if cfg.tasks.is_empty() {
        return Err(CliError::invalid("no tasks configured"));
    }
    for t in &cfg.tasks {
        t.validate()?;
    }
    if cfg.sample.l_fix == 0 {
        return Err(CliError::invalid("sample.l_fix must be positive"));
    }
    if cfg.data.csv.is_empty() && cfg.data.n_days == 0 {
        return Err(CliError::invalid("data.n_days must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.data.holdout_fraction) {
        return Err(CliError::invalid("data.holdout_fraction must be in [0, 1)"));
    }
    for p in cfg.data.csv.iter().chain(&cfg.data.prior) {
        if !p.is_file() {
            return Err(CliError::invalid(format!("referenced file {} does not exist", p.display())));
        }
    }
    cfg.data.plant.validate()?;
    cfg.model
        .validate()
        .map_err(|e| CliError::invalid(e.to_string()))?;
    cfg.train.validate()?;
    cfg.causal.validate()?;
    Ok(())
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed.expect("validated config has a seed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_and_seed_propagates() {
        let mut cfg = ExperimentConfig::default();
        let ov = Overrides {
            seed: Some(9),
            alpha: Some(0.01),
            task: Some(TaskKind::Forecast),
            ablation: Some(Ablation::Prompt),
            ..Default::default()
        };
        apply(&mut cfg, &ov);
        assert_eq!((cfg.data.plant.seed, cfg.train.seed), (9, 9));
        assert_eq!(cfg.causal.alpha, 0.01);
        assert_eq!(cfg.tasks, vec![TaskSpec::Forecast { horizon: 24 }]);
        assert_eq!(cfg.model.ablation, Ablation::Prompt);
        assert!(validate(&cfg).is_ok());
    }

    #[test]
    fn seed_is_mandatory() {
        let err = validate(&ExperimentConfig::default()).unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::VALIDATION);
    }

    #[test]
    fn toml_and_json_agree() {
        let t: ExperimentConfig = toml::from_str("seed = 3\n[train]\nepochs = 2\n[[tasks]]\ntask = \"forecast\"\nhorizon = 5\n").unwrap();
        let j: ExperimentConfig =
            serde_json::from_str(r#"{"seed":3,"train":{"epochs":2},"tasks":[{"task":"forecast","horizon":5}]}"#).unwrap();
        assert_eq!(t, j);
    }
}
