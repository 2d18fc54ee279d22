//! Synthetic cohorts drawn from the generative model itself: profile, then
//! phenotype, status, starting epoch, epoch durations, observation times and
//! finally one Gaussian-process draw per epoch.

mod truth;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, MeasurementEvent, Outcome, PatientRecord, StaticProfile, Vocabulary};
use crate::error::{Error, Result};
use crate::likelihood::NUGGET_LADDER;
use crate::linalg::cholesky_in_place;
use crate::mixture::{gating_probabilities, ModelParams};

pub use truth::{
    benchmark_truth, paper_scale_truth, recovery_truth, typical_stream_scale, TruthDesign,
};

/// Gaps between consecutive measurement times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ObservationSchedule {
    /// Every stream keeps its own clock.
    Independent { min_gap: f64, max_gap: f64 },
    /// All streams are measured together at shared times.
    Panel { min_gap: f64, max_gap: f64 },
}

impl Default for ObservationSchedule {
    fn default() -> Self {
        Self::Independent {
            min_gap: 1.0,
            max_gap: 4.0,
        }
    }
}

impl ObservationSchedule {
    fn gaps(&self) -> (f64, f64) {
        match *self {
            Self::Independent { min_gap, max_gap } | Self::Panel { min_gap, max_gap } => {
                (min_gap, max_gap)
            }
        }
    }
}

/// Independent categorical laws for the static fields. Empty weight vectors
/// mean uniform over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileLaw {
    pub age_mean: f64,
    pub age_sd: f64,
    pub gender: Vec<f64>,
    pub admission_floor: Vec<f64>,
    pub stem_cell_transplant: f64,
    pub icd9_group: Vec<f64>,
    pub transfer_status: Vec<f64>,
}

impl Default for ProfileLaw {
    fn default() -> Self {
        Self {
            age_mean: 62.0,
            age_sd: 17.0,
            gender: Vec::new(),
            admission_floor: Vec::new(),
            stem_cell_transplant: 0.05,
            icd9_group: Vec::new(),
            transfer_status: Vec::new(),
        }
    }
}

fn pick<R: Rng + ?Sized>(rng: &mut R, values: &[String], weights: &[f64]) -> Result<String> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty vocabulary field".into()));
    }
    if weights.is_empty() {
        return Ok(values[rng.gen_range(0..values.len())].clone());
    }
    if weights.len() != values.len() || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidArgument(
            "profile weights must be non-negative, one per vocabulary value".into(),
        ));
    }
    Ok(values[draw_index(rng, weights)].clone())
}

fn draw_index<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

impl ProfileLaw {
    pub fn sample<R: Rng + ?Sized>(
        &self,
        vocabulary: &Vocabulary,
        rng: &mut R,
    ) -> Result<StaticProfile> {
        let z: f64 = StandardNormal.sample(rng);
        Ok(StaticProfile {
            age: (self.age_mean + self.age_sd * z).clamp(18.0, 100.0),
            gender: pick(rng, &vocabulary.gender, &self.gender)?,
            admission_floor: pick(rng, &vocabulary.admission_floor, &self.admission_floor)?,
            stem_cell_transplant: rng.gen::<f64>() < self.stem_cell_transplant,
            icd9_group: pick(rng, &vocabulary.icd9_group, &self.icd9_group)?,
            transfer_status: pick(rng, &vocabulary.transfer_status, &self.transfer_status)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub patients: usize,
    pub seed: u64,
    /// Model to sample from. Its standardizer maps model units to raw units.
    pub params: ModelParams,
    pub schedule: ObservationSchedule,
    pub profile_law: ProfileLaw,
    pub id_prefix: String,
}

impl SimConfig {
    pub fn new(params: ModelParams, patients: usize, seed: u64) -> Self {
        Self {
            patients,
            seed,
            params,
            schedule: ObservationSchedule::default(),
            profile_law: ProfileLaw::default(),
            id_prefix: "sim".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patients == 0 {
            return Err(Error::InvalidArgument("need at least one patient".into()));
        }
        let (lo, hi) = self.schedule.gaps();
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "observation gaps must satisfy 0 < min <= max, got [{lo}, {hi}]"
            )));
        }
        self.params.validate()
    }
}

/// Hidden variables behind one simulated stay. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientTruth {
    pub patient_id: String,
    pub phenotype: usize,
    pub outcome: Outcome,
    pub initial_epoch: usize,
    /// Hours at which each epoch except the last ends.
    pub boundaries: Vec<usize>,
}

fn observation_times<R: Rng + ?Sized>(
    schedule: &ObservationSchedule,
    streams: usize,
    endpoint: f64,
    rng: &mut R,
) -> Vec<(f64, usize)> {
    let (lo, hi) = schedule.gaps();
    let mut out = Vec::new();
    let clock = |rng: &mut R| -> Vec<f64> {
        let mut times = Vec::new();
        let mut t = rng.gen::<f64>() * hi;
        while t < endpoint {
            times.push(t);
            t += lo + (hi - lo) * rng.gen::<f64>();
        }
        times
    };
    match schedule {
        ObservationSchedule::Independent { .. } => {
            for u in 0..streams {
                out.extend(clock(rng).into_iter().map(|t| (t, u)));
            }
        }
        ObservationSchedule::Panel { .. } => {
            for t in clock(rng) {
                out.extend((0..streams).map(|u| (t, u)));
            }
        }
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

/// Draws one stay. The record holds raw-unit values; the truth is returned
/// separately.
pub fn sample_patient<R: Rng + ?Sized>(
    config: &SimConfig,
    id: String,
    rng: &mut R,
) -> Result<(PatientRecord, PatientTruth)> {
    let params = &config.params;
    let profile = config.profile_law.sample(&params.encoder.vocabulary, rng)?;
    let gamma = gating_probabilities(&params.encoder.encode(&profile)?, &params.gating);
    let phenotype = draw_index(rng, &gamma);
    let outcome = if rng.gen::<f64>() < params.prior_icu {
        Outcome::Icu
    } else {
        Outcome::Discharged
    };
    let model = params.trajectory(outcome, phenotype);
    let k = model.num_epochs();
    let initial_epoch = draw_index(rng, &model.initial.0);
    let tables = model.durations.tables();
    let mut ends = Vec::with_capacity(k - initial_epoch);
    let mut clock = 0usize;
    for table in &tables[initial_epoch..] {
        clock += table.sample(rng);
        ends.push(clock);
    }
    let endpoint = clock as f64;
    let times = observation_times(&config.schedule, params.streams(), endpoint, rng);

    let mut events = Vec::with_capacity(times.len());
    let mut start = 0usize;
    let mut epoch_start = 0.0;
    for (i, &end) in ends.iter().enumerate() {
        let stop = times.partition_point(|&(t, _)| t < end as f64);
        let members = &times[start..stop];
        let kernel = model.epochs[initial_epoch + i].prepare();
        let values = draw_gp(members, &kernel, rng)?;
        for (&(t, u), v) in members.iter().zip(values) {
            events.push(MeasurementEvent {
                stream: u,
                time: t,
                value: params.standardizer.invert(u, v),
            });
        }
        start = stop;
        epoch_start = end as f64;
    }
    debug_assert!(epoch_start == endpoint);
    let record = PatientRecord {
        id: id.clone(),
        profile,
        events,
        outcome,
        endpoint_time: endpoint,
        admitted_at: None,
    };
    let truth = PatientTruth {
        patient_id: id,
        phenotype,
        outcome,
        initial_epoch,
        boundaries: ends[..ends.len() - 1].to_vec(),
    };
    Ok((record, truth))
}

fn draw_gp<R: Rng + ?Sized>(
    points: &[(f64, usize)],
    kernel: &crate::kernel::PreparedKernel,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = points.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let d = kernel.streams;
    let mut last_pivot = f64::NAN;
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    for &nugget in &NUGGET_LADDER {
        let mut cov = vec![0.0; n * n];
        for a in 0..n {
            let (ta, ua) = points[a];
            for b in 0..a {
                let (tb, ub) = points[b];
                let dt = ta - tb;
                let v = kernel.task_cov[ua * d + ub] * (-dt * dt * kernel.inv_two_l2).exp();
                cov[a * n + b] = v;
            }
            cov[a * n + a] = kernel.marginal_var(ua) + nugget;
        }
        match cholesky_in_place(&mut cov, n) {
            Ok(()) => {
                return Ok((0..n)
                    .map(|a| {
                        let row = &cov[a * n..a * n + a + 1];
                        kernel.mean[points[a].1]
                            + row.iter().zip(&eps).map(|(l, e)| l * e).sum::<f64>()
                    })
                    .collect())
            }
            Err(p) => last_pivot = p,
        }
    }
    Err(Error::NotPositiveDefinite {
        size: n,
        nugget: *NUGGET_LADDER.last().unwrap(),
        min_pivot: last_pivot,
    })
}

/// Independent substream for patient `index`.
pub fn patient_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// `config.patients` stays; identical for identical seeds whatever the thread
/// count.
pub fn sample_cohort(config: &SimConfig) -> Result<(Cohort, Vec<PatientTruth>)> {
    config.validate()?;
    let width = config.patients.to_string().len();
    let draws: Vec<Result<(PatientRecord, PatientTruth)>> = (0..config.patients)
        .into_par_iter()
        .map(|i| {
            let id = format!("{}-{:0width$}", config.id_prefix, i);
            sample_patient(config, id, &mut patient_rng(config.seed, i))
        })
        .collect();
    let mut patients = Vec::with_capacity(config.patients);
    let mut truth = Vec::with_capacity(config.patients);
    for d in draws {
        let (p, t) = d?;
        patients.push(p);
        truth.push(t);
    }
    let cohort = Cohort {
        stream_catalog: config.params.stream_catalog.clone(),
        vocabulary: config.params.encoder.vocabulary.clone(),
        patients,
    };
    Ok((cohort, truth))
}

/// Truth sidecar as CSV: `patient_id,phenotype,status,initial_epoch,boundaries`
/// with boundaries joined by `;`.
pub fn write_truth_csv<W: Write>(truth: &[PatientTruth], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "patient_id",
        "phenotype",
        "status",
        "initial_epoch",
        "boundaries",
    ])?;
    for t in truth {
        let bounds: Vec<String> = t.boundaries.iter().map(|b| b.to_string()).collect();
        w.write_record([
            t.patient_id.clone(),
            t.phenotype.to_string(),
            t.outcome.index().to_string(),
            t.initial_epoch.to_string(),
            bounds.join(";"),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_truth_csv<R: std::io::Read>(input: R) -> Result<Vec<PatientTruth>> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let bad = |m: &str| Error::Schema {
            line: line + 2,
            message: m.to_string(),
        };
        let num = |i: usize| -> Result<usize> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("expected a non-negative integer"))
        };
        let boundaries = match row.get(4) {
            Some("") | None => Vec::new(),
            Some(s) => s
                .split(';')
                .map(|b| b.parse().map_err(|_| bad("bad boundary")))
                .collect::<Result<_>>()?,
        };
        out.push(PatientTruth {
            patient_id: row.get(0).ok_or_else(|| bad("missing id"))?.to_string(),
            phenotype: num(1)?,
            outcome: match num(2)? {
                0 => Outcome::Discharged,
                1 => Outcome::Icu,
                _ => return Err(bad("status must be 0 or 1")),
            },
            initial_epoch: num(3)?,
            boundaries,
        });
    }
    Ok(out)
}
