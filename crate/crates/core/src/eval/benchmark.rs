use serde::{Deserialize, Serialize};

use super::{
    snapshot_baseline, stationary_baseline, BenchmarkReport, ModelEvaluation,
    DISCHARGE_LOWER_THRESHOLDS,
};
use crate::cohort::Cohort;
use crate::error::Result;
use crate::mixture::{em_fit, EmConfig, FitReport, ModelParams};
use crate::scoring::{score_cohort, score_cohort_by, ScoreOptions, ScoreTrace};
use crate::simulator::{sample_cohort, SimConfig};

/// Column names of the benchmark report.
pub const FULL: &str = "full";
pub const STATIONARY: &str = "stationary";
pub const SNAPSHOT: &str = "snapshot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkSettings {
    pub seed: u64,
    pub train_patients: usize,
    pub test_patients: usize,
    /// Shape of the full model; `None` uses the generating model's shape.
    pub phenotypes: Option<usize>,
    pub epochs: Option<usize>,
    pub em: EmConfig,
    pub target_tpr: f64,
    pub lower_thresholds: Vec<f64>,
    pub score: ScoreOptions,
}

impl Default for BenchmarkSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            train_patients: 2000,
            test_patients: 2000,
            phenotypes: None,
            epochs: None,
            em: EmConfig::default(),
            target_tpr: 0.5,
            lower_thresholds: DISCHARGE_LOWER_THRESHOLDS.to_vec(),
            score: ScoreOptions::default(),
        }
    }
}

/// Everything a benchmark run produces.
#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub report: BenchmarkReport,
    pub train: Cohort,
    pub test: Cohort,
    pub full_model: ModelParams,
    pub full_fit: FitReport,
    pub stationary_model: ModelParams,
    pub stationary_fit: FitReport,
    /// Evaluations in column order: full, stationary, snapshot.
    pub evaluations: Vec<(String, ModelEvaluation)>,
    pub traces: Vec<(String, Vec<ScoreTrace>)>,
}

impl BenchmarkRun {
    pub fn evaluation(&self, column: &str) -> Option<&ModelEvaluation> {
        self.evaluations
            .iter()
            .find(|(n, _)| n == column)
            .map(|(_, e)| e)
    }
}

/// Seeds of the training and test cohorts drawn for benchmark seed `seed`.
pub fn cohort_seeds(seed: u64) -> (u64, u64) {
    (seed.wrapping_mul(2), seed.wrapping_mul(2).wrapping_add(1))
}

/// Simulates training and test cohorts from `truth`, fits the full model
/// and the one-phenotype one-epoch ablation on the training cohort, and
/// scores the test cohort with the full model, the ablation and the
/// memoryless baseline (under the ablation's parameters).
pub fn run_benchmark(truth: &ModelParams, settings: &BenchmarkSettings) -> Result<BenchmarkRun> {
    let (train_seed, test_seed) = cohort_seeds(settings.seed);
    let mut train_cfg = SimConfig::new(truth.clone(), settings.train_patients, train_seed);
    train_cfg.id_prefix = "train".into();
    let mut test_cfg = SimConfig::new(truth.clone(), settings.test_patients, test_seed);
    test_cfg.id_prefix = "test".into();
    let (train, _) = sample_cohort(&train_cfg)?;
    let (test, _) = sample_cohort(&test_cfg)?;

    let g = settings.phenotypes.unwrap_or(truth.phenotypes);
    let k = settings.epochs.unwrap_or(truth.epochs);
    log::info!("benchmark seed {}: fitting G={g} K={k}", settings.seed);
    let (full_model, full_fit) = em_fit(&train, g, k, &settings.em)?;
    log::info!(
        "benchmark seed {}: fitting the stationary ablation",
        settings.seed
    );
    let (stationary_model, stationary_fit) = em_fit(&train, 1, 1, &settings.em)?;

    let full = score_cohort(&full_model, &test, &settings.score)?;
    let stationary = score_cohort_by(&test, |p| stationary_baseline(&stationary_model, p))?;
    let snapshot = score_cohort_by(&test, |p| snapshot_baseline(&stationary_model, p))?;

    let traces = vec![
        (FULL.to_string(), full),
        (STATIONARY.to_string(), stationary),
        (SNAPSHOT.to_string(), snapshot),
    ];
    let evaluations = traces
        .iter()
        .map(|(n, t)| {
            Ok((
                n.clone(),
                ModelEvaluation::compute(t, &settings.lower_thresholds, settings.target_tpr)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<(&str, &ModelEvaluation)> =
        evaluations.iter().map(|(n, e)| (n.as_str(), e)).collect();
    let mut report = BenchmarkReport::new(&traces[0].1, &columns);
    report
        .metadata
        .insert("seed".into(), settings.seed.to_string());
    report
        .metadata
        .insert("train_patients".into(), settings.train_patients.to_string());
    report.metadata.insert("phenotypes".into(), g.to_string());
    report.metadata.insert("epochs".into(), k.to_string());
    Ok(BenchmarkRun {
        report,
        train,
        test,
        full_model,
        full_fit,
        stationary_model,
        stationary_fit,
        evaluations,
        traces,
    })
}
