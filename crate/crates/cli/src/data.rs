//! Input days, the prior graph and the dataset manifest.

use std::collections::BTreeSet;
use std::fs::File;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use cmts_core::csvio::read_series;
use cmts_core::plant::{plant_prior, PLANT_VARIABLES};
use cmts_core::{generate_dataset, PriorGraph, TimeSeriesMatrix};
use cmts_model::TaskKind;
use cmts_train::TaskSpec;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Day {
    pub name: String,
    pub start: NaiveDateTime,
    pub raw: TimeSeriesMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub days: Vec<Day>,
    pub prior: PriorGraph,
}

impl Dataset {
    pub fn variables(&self) -> &[String] {
        self.days[0].raw.variable_names()
    }

    pub fn raws(&self) -> Vec<TimeSeriesMatrix<f64>> {
        self.days.iter().map(|d| d.raw.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub csv: PathBuf,
    pub task: TaskKind,
    pub params: TaskSpec,
    /// Prompt template identifier.
    pub template: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub variables: Vec<String>,
    pub resolution_minutes: u32,
    pub prior: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.csv.is_relative() {
                e.csv = dir.join(&e.csv);
            }
        }
        Ok(m)
    }

    /// Distinct CSV files in first-seen order.
    pub fn csv_files(&self) -> Vec<PathBuf> {
        let mut seen = BTreeSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.csv.clone()))
            .map(|e| e.csv.clone())
            .collect()
    }
}

fn is_manifest(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn read_day(path: &Path, default_resolution: u32) -> Result<Day, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (raw, start) =
        read_series::<f64, _>(f, default_resolution).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    if raw.is_empty() || raw.n_vars() == 0 {
        return Err(CliError::invalid(format!("{}: no data rows", path.display())));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "day".to_string(), |s| s.to_string_lossy().into_owned());
    Ok(Day { name, start, raw })
}

pub fn read_prior(path: &Path) -> Result<PriorGraph, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    PriorGraph::from_json_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
}

/// Days from the configured CSVs or, when none are given, from the plant
/// generator.
pub fn load(cfg: &ExperimentConfig) -> Result<Dataset, CliError> {
    let mut files = Vec::new();
    for p in &cfg.data.csv {
        if is_manifest(p) {
            files.extend(Manifest::read(p)?.csv_files());
        } else {
            files.push(p.clone());
        }
    }
    let days = if files.is_empty() {
        let ds = generate_dataset(&cfg.data.plant, cfg.data.n_days)?;
        ds.days
            .into_iter()
            .enumerate()
            .map(|(i, d)| Day {
                name: format!("day_{i:04}"),
                start: d.date.and_hms_opt(0, 0, 0).expect("midnight exists"),
                raw: d.series,
            })
            .collect()
    } else {
        files
            .iter()
            .map(|p| read_day(p, cfg.data.plant.resolution_minutes))
            .collect::<Result<Vec<_>, _>>()?
    };
    let names = days[0].raw.variable_names().to_vec();
    for d in &days {
        if d.raw.variable_names() != names {
            return Err(CliError::invalid(format!(
                "day `{}` has variables {:?}, expected {:?}",
                d.name,
                d.raw.variable_names(),
                names
            )));
        }
    }
    let prior = match &cfg.data.prior {
        Some(p) => read_prior(p)?,
        None if names.iter().map(String::as_str).eq(PLANT_VARIABLES) => plant_prior()?,
        None => PriorGraph::empty(names.clone())?,
    };
    if prior.nodes() != names.as_slice() {
        return Err(CliError::invalid(format!(
            "prior nodes {:?} do not match data variables {:?}",
            prior.nodes(),
            names
        )));
    }
    Ok(Dataset { days, prior })
}
