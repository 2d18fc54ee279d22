//! Resolved per-command settings. Values come from built-in defaults, then
//! an optional config file, then command-line flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wardrisk::eval::{BenchmarkSettings, DISCHARGE_LOWER_THRESHOLDS};
use wardrisk::mixture::{EmConfig, ModelParams};
use wardrisk::scoring::ScoreOptions;
use wardrisk::simulator::{
    benchmark_truth, paper_scale_truth, recovery_truth, ObservationSchedule,
};

use crate::failure::{Failure, Result};

/// Built-in generating models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TruthChoice {
    /// Two phenotypes, three epochs, ward-like prevalence.
    Benchmark,
    /// Well separated two-phenotype three-epoch model.
    Recovery,
    /// Four phenotypes, twelve epochs, 21 streams.
    PaperScale,
}

impl TruthChoice {
    pub fn build(self, seed: u64) -> ModelParams {
        match self {
            TruthChoice::Benchmark => benchmark_truth(),
            TruthChoice::Recovery => recovery_truth(),
            TruthChoice::PaperScale => paper_scale_truth(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scorer {
    Full,
    Stationary,
    Snapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSettings {
    pub out_dir: PathBuf,
    pub patients: usize,
    pub seed: u64,
    pub truth: TruthChoice,
    /// Seed of the randomly drawn paper-scale parameters.
    pub truth_seed: u64,
    /// Sample from a saved model instead of a built-in one.
    pub model: Option<PathBuf>,
    pub schedule: ObservationSchedule,
    pub id_prefix: String,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("."),
            patients: 1000,
            seed: 0,
            truth: TruthChoice::Benchmark,
            truth_seed: 0,
            model: None,
            schedule: ObservationSchedule::default(),
            id_prefix: "sim".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub cohort: PathBuf,
    pub out_dir: PathBuf,
    pub phenotypes: usize,
    pub epochs: usize,
    pub em: EmConfig,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            cohort: PathBuf::new(),
            out_dir: PathBuf::from("."),
            phenotypes: 2,
            epochs: 3,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectSettings {
    pub cohort: PathBuf,
    pub out_dir: PathBuf,
    pub phenotypes: Vec<usize>,
    pub epochs: Vec<usize>,
    pub em: EmConfig,
}

impl Default for SelectSettings {
    fn default() -> Self {
        Self {
            cohort: PathBuf::new(),
            out_dir: PathBuf::from("."),
            phenotypes: vec![1, 2, 3],
            epochs: vec![1, 2, 3, 4],
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSettings {
    pub model: PathBuf,
    pub cohort: PathBuf,
    pub out_dir: PathBuf,
    pub scorer: Scorer,
    pub options: ScoreOptions,
}

impl Default for ScoreSettings {
    fn default() -> Self {
        Self {
            model: PathBuf::new(),
            cohort: PathBuf::new(),
            out_dir: PathBuf::from("."),
            scorer: Scorer::Full,
            options: ScoreOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub model: PathBuf,
    pub cohort: PathBuf,
    /// One-phenotype one-epoch model for the ablation columns.
    pub stationary_model: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub target_tpr: f64,
    pub lower_thresholds: Vec<f64>,
    pub options: ScoreOptions,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            model: PathBuf::new(),
            cohort: PathBuf::new(),
            stationary_model: None,
            out_dir: PathBuf::from("."),
            target_tpr: 0.5,
            lower_thresholds: DISCHARGE_LOWER_THRESHOLDS.to_vec(),
            options: ScoreOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkCmdSettings {
    pub out_dir: PathBuf,
    pub truth: TruthChoice,
    pub truth_seed: u64,
    pub run: BenchmarkSettings,
}

impl Default for BenchmarkCmdSettings {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("."),
            truth: TruthChoice::Benchmark,
            truth_seed: 0,
            run: BenchmarkSettings::default(),
        }
    }
}

/// Loads the section `command` of a TOML config file or of a JSON run
/// manifest. A missing section yields the defaults.
pub fn load_section<T: DeserializeOwned + Default>(
    path: Option<&Path>,
    command: &str,
) -> Result<(T, Option<usize>)> {
    let Some(path) = path else {
        return Ok((T::default(), None));
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e == "json");
    let mut root: serde_json::Value = if is_json {
        serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))?
    };
    if let Some(inner) = root.get_mut("config") {
        root = inner.take();
    }
    let threads = match root.get("threads") {
        None => None,
        Some(v) => Some(
            v.as_u64()
                .filter(|&n| n > 0)
                .ok_or_else(|| Failure::config("`threads` must be a positive integer"))?
                as usize,
        ),
    };
    let section = match root.get_mut(command) {
        Some(v) => serde_json::from_value(v.take())
            .map_err(|e| Failure::config(format!("{} [{command}]: {e}", path.display())))?,
        None => T::default(),
    };
    Ok((section, threads))
}

pub fn require_file(path: &Path, flag: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        return Err(Failure::config(format!("missing {flag}")));
    }
    if !path.is_file() {
        return Err(Failure::config(format!(
            "{flag}: `{}` is not a readable file",
            path.display()
        )));
    }
    Ok(())
}

pub fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Failure::config(format!(
            "output directory `{}` does not exist",
            path.display()
        )));
    }
    Ok(())
}
