//! Phenotype-gated mixture of trajectory models.
//!
//! Every patient belongs to one of `G` latent phenotypes, drawn at admission
//! from a softmax gate over the encoded static profile. Each phenotype has
//! one trajectory model for stable stays and one for stays that ended in an
//! intensive-care transfer.

mod em;
mod init;
mod optim;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Outcome, PatientRecord, StaticEncoder, StreamInfo};
use crate::error::{Error, Result};
use crate::kernel::LengthScaleBounds;
use crate::likelihood::{Observation, Standardizer};
use crate::linalg::log_sum_exp;
use crate::trajectory::{segment_posteriors, trajectory_log_likelihood, Horizon, TrajectoryModel};

pub use em::{em_fit, phenotype_posteriors, EmConfig, FitReport};

/// Version written into every model file.
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// Default prior probability of the deteriorating hypothesis.
pub const DEFAULT_PRIOR_ICU: f64 = 0.09;

/// Softmax gate weights, one row per phenotype. Row 0 is the reference class
/// and stays at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    pub weights: Vec<Vec<f64>>,
}

impl GatingParams {
    pub fn zeros(phenotypes: usize, features: usize) -> Self {
        Self {
            weights: vec![vec![0.0; features]; phenotypes],
        }
    }

    pub fn phenotypes(&self) -> usize {
        self.weights.len()
    }

    pub fn features(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.features();
        if self.weights.is_empty() {
            return Err(Error::InvalidArgument(
                "gating needs at least one phenotype".into(),
            ));
        }
        if self.weights.iter().any(|row| row.len() != f) {
            return Err(Error::InvalidArgument(
                "gating rows have different lengths".into(),
            ));
        }
        if self.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("gating weight".into()));
        }
        if self.weights[0].iter().any(|&w| w != 0.0) {
            return Err(Error::InvalidArgument(
                "gating reference row must be zero".into(),
            ));
        }
        Ok(())
    }
}

/// `log softmax(W y)`.
pub fn gating_log_probabilities(y: &[f64], gating: &GatingParams) -> Vec<f64> {
    let logits: Vec<f64> = gating
        .weights
        .iter()
        .map(|row| row.iter().zip(y).map(|(w, x)| w * x).sum())
        .collect();
    let norm = log_sum_exp(&logits);
    logits.into_iter().map(|l| l - norm).collect()
}

/// Phenotype membership probabilities `softmax(W y)`.
pub fn gating_probabilities(y: &[f64], gating: &GatingParams) -> Vec<f64> {
    gating_log_probabilities(y, gating)
        .into_iter()
        .map(f64::exp)
        .collect()
}

/// Everything needed to score a new patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub schema_version: u32,
    pub phenotypes: usize,
    pub epochs: usize,
    pub rank: usize,
    /// Trajectory models for stable stays, one per phenotype.
    pub stable: Vec<TrajectoryModel>,
    /// Trajectory models for stays that ended in a transfer, one per phenotype.
    pub deteriorating: Vec<TrajectoryModel>,
    pub gating: GatingParams,
    pub prior_icu: f64,
    pub encoder: StaticEncoder,
    pub standardizer: Standardizer,
    pub stream_catalog: Vec<StreamInfo>,
    pub length_scale_bounds: LengthScaleBounds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_report: Option<FitReport>,
}

impl ModelParams {
    pub fn streams(&self) -> usize {
        self.stream_catalog.len()
    }

    pub fn models(&self, outcome: Outcome) -> &[TrajectoryModel] {
        match outcome {
            Outcome::Discharged => &self.stable,
            Outcome::Icu => &self.deteriorating,
        }
    }

    pub fn models_mut(&mut self, outcome: Outcome) -> &mut Vec<TrajectoryModel> {
        match outcome {
            Outcome::Discharged => &mut self.stable,
            Outcome::Icu => &mut self.deteriorating,
        }
    }

    pub fn trajectory(&self, outcome: Outcome, phenotype: usize) -> &TrajectoryModel {
        &self.models(outcome)[phenotype]
    }

    pub fn log_prior(&self, outcome: Outcome) -> f64 {
        match outcome {
            Outcome::Discharged => (-self.prior_icu).ln_1p(),
            Outcome::Icu => self.prior_icu.ln(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "model schema version {} is not supported (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.prior_icu >= 0.0 && self.prior_icu <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prior {} outside [0, 1]",
                self.prior_icu
            )));
        }
        self.gating.validate()?;
        let g = self.phenotypes;
        if self.gating.phenotypes() != g || self.stable.len() != g || self.deteriorating.len() != g
        {
            return Err(Error::Model(format!("expected {g} phenotypes throughout")));
        }
        if self.gating.features() != self.encoder.len() {
            return Err(Error::Model(format!(
                "gating has {} features, encoder produces {}",
                self.gating.features(),
                self.encoder.len()
            )));
        }
        let d = self.streams();
        if self.standardizer.mean.len() != d || self.standardizer.sd.len() != d {
            return Err(Error::Model(
                "standardizer does not match the stream catalog".into(),
            ));
        }
        for m in self.stable.iter().chain(&self.deteriorating) {
            m.validate(&self.length_scale_bounds)?;
            if m.num_epochs() != self.epochs || m.streams() != d {
                return Err(Error::Model(format!(
                    "trajectory model shape ({} epochs, {} streams) disagrees with ({}, {d})",
                    m.num_epochs(),
                    m.streams(),
                    self.epochs
                )));
            }
        }
        Ok(())
    }

    /// Number of free parameters, counted from the stored tensors.
    pub fn parameter_count(&self) -> usize {
        let mut p = 0;
        for m in self.stable.iter().chain(&self.deteriorating) {
            for e in &m.epochs {
                p += e.mean.len() + e.factor.len() + e.diag.len() + 1 + e.noise.len();
            }
            p += 2 * m.durations.epochs.len();
            p += m.initial.0.len() - 1;
        }
        p += self
            .gating
            .weights
            .iter()
            .skip(1)
            .map(Vec::len)
            .sum::<usize>();
        p + 1
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::Model(format!(
                    "model schema version {v} is not supported (expected {MODEL_SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Model("model file has no schema_version".into())),
        }
        let params: Self = serde_json::from_value(value)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }

    /// Encoded static features of a profile.
    pub fn features(&self, record: &PatientRecord) -> Result<Vec<f64>> {
        self.encoder.encode(&record.profile)
    }

    /// Standardized observations of a record up to and including `t`.
    pub fn observations(&self, record: &PatientRecord, t: f64) -> Vec<Observation> {
        self.standardizer.apply_all(record.events_until(t))
    }
}

/// `log sum_z gamma_z exp(l_z)` over per-phenotype trajectory likelihoods.
pub fn mixture_log_likelihood(
    obs: &[Observation],
    horizon: Horizon,
    log_gamma: &[f64],
    models: &[TrajectoryModel],
) -> Result<f64> {
    let mut terms = Vec::with_capacity(models.len());
    for (lg, model) in log_gamma.iter().zip(models) {
        if *lg == f64::NEG_INFINITY {
            continue;
        }
        let ll = match horizon {
            Horizon::Censored(t) => trajectory_log_likelihood(obs, t, model)?,
            Horizon::Terminal(_) => {
                segment_posteriors(obs, horizon, model, f64::INFINITY)?.log_likelihood
            }
        };
        terms.push(lg + ll);
    }
    Ok(log_sum_exp(&terms))
}

/// `log P(observations in [0, t] | status, profile)`, the phenotype summed out
/// under the gate. Densities refer to standardized measurement values.
pub fn class_conditional_log_likelihood(
    record: &PatientRecord,
    t: f64,
    outcome: Outcome,
    params: &ModelParams,
) -> Result<f64> {
    let y = params.features(record)?;
    let log_gamma = gating_log_probabilities(&y, &params.gating);
    let obs = params.observations(record, t);
    mixture_log_likelihood(
        &obs,
        Horizon::Censored(t),
        &log_gamma,
        params.models(outcome),
    )
}

/// Observed-data log likelihood of one finished stay including its label:
/// `log p_v + log sum_z gamma_z P(observations | v, z)` with the last epoch
/// ending at the endpoint.
pub fn stay_log_likelihood(record: &PatientRecord, params: &ModelParams) -> Result<f64> {
    let y = params.features(record)?;
    let log_gamma = gating_log_probabilities(&y, &params.gating);
    let obs = params.observations(record, record.endpoint_time);
    let ll = mixture_log_likelihood(
        &obs,
        Horizon::Terminal(record.endpoint_time),
        &log_gamma,
        params.models(record.outcome),
    )?;
    Ok(ll + params.log_prior(record.outcome))
}

/// Sum of [`stay_log_likelihood`] over a cohort, accumulated in patient order.
pub fn cohort_log_likelihood(params: &ModelParams, cohort: &Cohort) -> Result<f64> {
    let parts: Vec<Result<f64>> = cohort
        .patients
        .par_iter()
        .map(|p| stay_log_likelihood(p, params))
        .collect();
    let mut total = 0.0;
    for part in parts {
        total += part?;
    }
    Ok(total)
}

/// Free parameters of a model with `g` phenotypes, `k` epochs, `d` streams,
/// `f` static features and task-covariance rank `rank`: per status and
/// phenotype the epoch means, factors, diagonals, length scale and noise, two
/// duration parameters per epoch and `k - 1` initial-epoch probabilities;
/// `(g - 1) f` gate weights; one prior.
pub fn count_parameters(g: usize, k: usize, d: usize, f: usize, rank: usize) -> usize {
    let per_epoch = d + d * rank + d + 1 + d;
    let per_model = k * per_epoch + 2 * k + (k - 1);
    g * 2 * per_model + (g - 1) * f + 1
}

/// Bayesian information criterion with the number of patients as sample size.
pub fn bic(params: &ModelParams, cohort: &Cohort) -> Result<f64> {
    let ll = cohort_log_likelihood(params, cohort)?;
    Ok(bic_from(ll, params.parameter_count(), cohort.len()))
}

pub fn bic_from(log_likelihood: f64, parameters: usize, patients: usize) -> f64 {
    -2.0 * log_likelihood + parameters as f64 * (patients as f64).ln()
}

/// One trained candidate of a model-selection sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicEntry {
    pub phenotypes: usize,
    pub epochs: usize,
    pub log_likelihood: f64,
    pub parameters: usize,
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub phenotypes: usize,
    pub epochs: usize,
    pub params: ModelParams,
    pub table: Vec<BicEntry>,
}

/// Trains every `(G, K)` pair with the same seed and keeps the lowest BIC.
/// Ties go to the smaller model (earlier in the sweep order).
pub fn select_model(
    train: &Cohort,
    phenotype_range: &[usize],
    epoch_range: &[usize],
    config: &EmConfig,
) -> Result<Selection> {
    if phenotype_range.is_empty() || epoch_range.is_empty() {
        return Err(Error::InvalidArgument("empty model-selection range".into()));
    }
    let mut table = Vec::new();
    let mut best: Option<(f64, ModelParams)> = None;
    for &g in phenotype_range {
        for &k in epoch_range {
            let (params, report) = em_fit(train, g, k, config)?;
            let ll = *report.trace.last().unwrap_or(&f64::NEG_INFINITY);
            let parameters = params.parameter_count();
            let score = bic_from(ll, parameters, train.len());
            log::info!("G={g} K={k}: log likelihood {ll:.3}, BIC {score:.3}");
            table.push(BicEntry {
                phenotypes: g,
                epochs: k,
                log_likelihood: ll,
                parameters,
                bic: score,
                iterations: report.iterations,
                converged: report.converged,
            });
            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                best = Some((score, params));
            }
        }
    }
    let (_, params) = best.expect("non-empty sweep");
    Ok(Selection {
        phenotypes: params.phenotypes,
        epochs: params.epochs,
        params,
        table,
    })
}
