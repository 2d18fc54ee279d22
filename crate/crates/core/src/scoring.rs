//! Online risk score: the posterior probability that a patient is
//! deteriorating given the static profile and every measurement so far.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, MeasurementEvent, Outcome, PatientRecord, StaticProfile};
use crate::error::{Error, Result};
use crate::likelihood::Observation;
use crate::linalg::{log_add_exp, log_sum_exp};
use crate::mixture::{gating_log_probabilities, ModelParams};
use crate::trajectory::{ForwardCache, PreparedModel};

/// Bayes posterior of the deteriorating hypothesis from the two class log
/// likelihoods and the prior `p1`, evaluated in log space.
pub fn posterior_risk(
    log_lik_stable: f64,
    log_lik_deteriorating: f64,
    prior_icu: f64,
) -> Result<f64> {
    let a1 = prior_icu.ln() + log_lik_deteriorating;
    let a0 = (-prior_icu).ln_1p() + log_lik_stable;
    let norm = log_add_exp(a0, a1);
    if norm.is_nan() || norm == f64::NEG_INFINITY {
        return Err(Error::NonFinite(format!(
            "both hypotheses have zero likelihood (log {log_lik_stable}, {log_lik_deteriorating})"
        )));
    }
    if a1 == f64::INFINITY || a0 == f64::INFINITY {
        return Err(Error::NonFinite("infinite class likelihood".into()));
    }
    Ok((a1 - norm).exp().clamp(0.0, 1.0))
}

/// Streaming state of one patient.
pub struct ScoringSession<'a> {
    params: &'a ModelParams,
    prepared: [Vec<PreparedModel>; 2],
    caches: [Vec<ForwardCache>; 2],
    log_gamma: Vec<f64>,
    buffer: Vec<Observation>,
    risk: f64,
    last_time: f64,
}

/// Starts a session at admission: the gate is evaluated once from the
/// profile and the score is the prior.
pub fn open_session<'a>(
    params: &'a ModelParams,
    profile: &StaticProfile,
) -> Result<ScoringSession<'a>> {
    let y = params.encoder.encode(profile)?;
    let log_gamma = gating_log_probabilities(&y, &params.gating);
    let prep = |o: Outcome| params.models(o).iter().map(PreparedModel::new).collect();
    let caches = |o: Outcome| params.models(o).iter().map(ForwardCache::new).collect();
    Ok(ScoringSession {
        params,
        prepared: [prep(Outcome::Discharged), prep(Outcome::Icu)],
        caches: [caches(Outcome::Discharged), caches(Outcome::Icu)],
        log_gamma,
        buffer: Vec::new(),
        risk: params.prior_icu,
        last_time: 0.0,
    })
}

impl ScoringSession<'_> {
    pub fn risk(&self) -> f64 {
        self.risk
    }

    pub fn last_time(&self) -> f64 {
        self.last_time
    }

    /// Phenotype membership probabilities fixed at admission.
    pub fn phenotype_probabilities(&self) -> Vec<f64> {
        self.log_gamma.iter().map(|l| l.exp()).collect()
    }

    pub fn observations(&self) -> &[Observation] {
        &self.buffer
    }

    /// Adds a measurement and returns the updated score. Events must arrive
    /// in time order. After an error the session should be discarded.
    pub fn observe(&mut self, event: &MeasurementEvent) -> Result<f64> {
        if !event.time.is_finite() || event.time < self.last_time {
            return Err(Error::OutOfOrder {
                time: event.time,
                last: self.last_time,
            });
        }
        if event.stream >= self.params.streams() {
            return Err(Error::InvalidArgument(format!(
                "stream {} outside the model's {} streams",
                event.stream,
                self.params.streams()
            )));
        }
        if !event.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "measurement value at t={}",
                event.time
            )));
        }
        self.buffer.push(self.params.standardizer.apply(event));
        self.evaluate(event.time)
    }

    /// Re-evaluates the score at `t` without new measurements, letting the
    /// duration terms of the running epoch advance.
    pub fn tick(&mut self, t: f64) -> Result<f64> {
        if !t.is_finite() || t < self.last_time {
            return Err(Error::OutOfOrder {
                time: t,
                last: self.last_time,
            });
        }
        self.evaluate(t)
    }

    /// Per-class mixture log likelihoods `[stable, deteriorating]` at `t`.
    fn class_log_likelihoods(&mut self, t: f64) -> Result<[f64; 2]> {
        let d = self.params.streams();
        let mut out = [0.0; 2];
        for v in 0..2 {
            let mut terms = Vec::with_capacity(self.log_gamma.len());
            for (z, lg) in self.log_gamma.iter().enumerate() {
                if *lg == f64::NEG_INFINITY {
                    continue;
                }
                let ll =
                    self.caches[v][z].update_prepared(&self.prepared[v][z], d, &self.buffer, t)?;
                terms.push(lg + ll);
            }
            out[v] = log_sum_exp(&terms);
        }
        Ok(out)
    }

    fn evaluate(&mut self, t: f64) -> Result<f64> {
        let [l0, l1] = self.class_log_likelihoods(t)?;
        self.risk = posterior_risk(l0, l1, self.params.prior_icu)?;
        self.last_time = t;
        Ok(self.risk)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePoint {
    pub time: f64,
    pub risk: f64,
}

/// Score trace of one patient together with what evaluation needs to know
/// about the stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTrace {
    pub patient_id: String,
    pub outcome: Outcome,
    pub endpoint_time: f64,
    pub points: Vec<ScorePoint>,
}

impl ScoreTrace {
    pub fn max_risk(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.risk)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Also re-evaluate on every whole hour between measurements, up to the
    /// endpoint.
    pub hourly_ticks: bool,
}

/// Score after every measurement. A record without measurements yields the
/// single point `(0, p1)`.
pub fn score_trajectory(params: &ModelParams, record: &PatientRecord) -> Result<Vec<ScorePoint>> {
    score_trajectory_with(params, record, &ScoreOptions::default())
}

pub fn score_trajectory_with(
    params: &ModelParams,
    record: &PatientRecord,
    options: &ScoreOptions,
) -> Result<Vec<ScorePoint>> {
    let mut session = open_session(params, &record.profile)?;
    if record.events.is_empty() && !options.hourly_ticks {
        return Ok(vec![ScorePoint {
            time: 0.0,
            risk: session.risk(),
        }]);
    }
    let mut points = Vec::with_capacity(record.events.len());
    let mut next_hour = 1.0;
    for event in &record.events {
        if options.hourly_ticks {
            while next_hour < event.time {
                tick_into(&mut session, next_hour, &mut points)?;
                next_hour += 1.0;
            }
        }
        let risk = session.observe(event)?;
        points.push(ScorePoint {
            time: event.time,
            risk,
        });
        if next_hour <= event.time {
            next_hour = event.time.floor() + 1.0;
        }
    }
    if options.hourly_ticks {
        while next_hour <= record.endpoint_time {
            tick_into(&mut session, next_hour, &mut points)?;
            next_hour += 1.0;
        }
        if points.is_empty() {
            points.push(ScorePoint {
                time: 0.0,
                risk: params.prior_icu,
            });
        }
    }
    Ok(points)
}

fn tick_into(session: &mut ScoringSession, t: f64, points: &mut Vec<ScorePoint>) -> Result<()> {
    let risk = session.tick(t)?;
    points.push(ScorePoint { time: t, risk });
    Ok(())
}

/// Scores every patient, in parallel, keeping cohort order.
pub fn score_cohort(
    params: &ModelParams,
    cohort: &Cohort,
    options: &ScoreOptions,
) -> Result<Vec<ScoreTrace>> {
    score_cohort_by(cohort, |p| score_trajectory_with(params, p, options))
}

/// Applies a per-record scorer to every patient, in parallel, keeping
/// cohort order.
pub fn score_cohort_by<F>(cohort: &Cohort, scorer: F) -> Result<Vec<ScoreTrace>>
where
    F: Fn(&PatientRecord) -> Result<Vec<ScorePoint>> + Sync,
{
    let parts: Vec<Result<ScoreTrace>> = cohort
        .patients
        .par_iter()
        .map(|p| {
            Ok(ScoreTrace {
                patient_id: p.id.clone(),
                outcome: p.outcome,
                endpoint_time: p.endpoint_time,
                points: scorer(p)?,
            })
        })
        .collect();
    parts.into_iter().collect()
}

/// CSV with columns `patient_id,time,risk`.
pub fn write_traces_csv<W: Write>(traces: &[ScoreTrace], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patient_id", "time", "risk"])?;
    for t in traces {
        for p in &t.points {
            w.write_record([
                t.patient_id.as_str(),
                &p.time.to_string(),
                &p.risk.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Reads a score CSV and attaches labels and endpoints from `cohort`. Every
/// cohort patient must appear, with rows grouped by patient.
pub fn read_traces_csv<R: Read>(input: R, cohort: &Cohort) -> Result<Vec<ScoreTrace>> {
    let mut by_id: std::collections::HashMap<String, Vec<ScorePoint>> = Default::default();
    let mut r = csv::Reader::from_reader(input);
    for (line, row) in r.records().enumerate() {
        let row = row?;
        let bad = |m: &str| Error::Schema {
            line: line + 2,
            message: m.to_string(),
        };
        let id = row.get(0).ok_or_else(|| bad("missing patient_id"))?;
        let num = |i: usize| -> Result<f64> {
            row.get(i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad("expected a finite number"))
        };
        let point = ScorePoint {
            time: num(1)?,
            risk: num(2)?,
        };
        if !(0.0..=1.0).contains(&point.risk) {
            return Err(bad("risk outside [0, 1]"));
        }
        by_id.entry(id.to_string()).or_default().push(point);
    }
    cohort
        .patients
        .iter()
        .map(|p| {
            let points = by_id.remove(&p.id).ok_or_else(|| Error::Invariant {
                patient: p.id.clone(),
                rule: "every cohort patient has a score trace".into(),
            })?;
            Ok(ScoreTrace {
                patient_id: p.id.clone(),
                outcome: p.outcome,
                endpoint_time: p.endpoint_time,
                points,
            })
        })
        .collect()
}
