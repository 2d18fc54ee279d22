//! Alarm metrics over score traces: TPR against PPV curves with a
//! precision-recall style area, lead times at a fixed TPR, a two-threshold
//! ICU/discharge rule, and the memoryless and stationary baselines.

mod benchmark;
mod export;

pub use benchmark::{
    cohort_seeds, run_benchmark, BenchmarkRun, BenchmarkSettings, FULL, SNAPSHOT, STATIONARY,
};

pub use export::{
    curve_svg, write_curve_csv, write_lead_csv, BenchmarkReport, BenchmarkRow, ModelEvaluation,
    DISCHARGE_LOWER_THRESHOLDS,
};

use serde::{Deserialize, Serialize};

use crate::cohort::{Outcome, PatientRecord};
use crate::error::{Error, Result};
use crate::linalg::log_sum_exp;
use crate::mixture::{gating_log_probabilities, ModelParams};
use crate::scoring::{posterior_risk, score_trajectory, ScorePoint, ScoreTrace};

/// Per-patient result of applying an alarm rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmOutcome {
    pub patient_id: String,
    pub outcome: Outcome,
    pub alarmed: bool,
    pub first_alarm: Option<f64>,
    pub endpoint_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub tpr: f64,
    /// `None` when no patient alarms.
    pub ppv: Option<f64>,
    pub true_positives: usize,
    pub alarms: usize,
    /// Median hours between first alarm and endpoint over true positives.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_hours: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub points: Vec<CurvePoint>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub tpr: f64,
    pub ppv: Option<f64>,
    pub outcomes: Vec<AlarmOutcome>,
}

/// First time the score reaches `upper`, unless it drops below `lower`
/// before that. `lower = 0` never discharges.
fn first_alarm(points: &[ScorePoint], lower: f64, upper: f64) -> Option<f64> {
    for p in points {
        if p.risk >= upper {
            return Some(p.time);
        }
        if p.risk < lower {
            return None;
        }
    }
    None
}

fn outcomes(traces: &[ScoreTrace], lower: f64, upper: f64) -> Vec<AlarmOutcome> {
    traces
        .iter()
        .map(|t| {
            let first = first_alarm(&t.points, lower, upper).map(|a| a.min(t.endpoint_time));
            AlarmOutcome {
                patient_id: t.patient_id.clone(),
                outcome: t.outcome,
                alarmed: first.is_some(),
                first_alarm: first,
                endpoint_time: t.endpoint_time,
            }
        })
        .collect()
}

fn positives(traces: &[ScoreTrace]) -> usize {
    traces.iter().filter(|t| t.outcome == Outcome::Icu).count()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

fn summarize(threshold: f64, outcomes: &[AlarmOutcome], positives: usize) -> CurvePoint {
    let alarms = outcomes.iter().filter(|o| o.alarmed).count();
    let mut leads: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.alarmed && o.outcome == Outcome::Icu)
        .map(|o| o.endpoint_time - o.first_alarm.unwrap_or(o.endpoint_time))
        .collect();
    let tp = leads.len();
    CurvePoint {
        threshold,
        tpr: if positives == 0 {
            0.0
        } else {
            tp as f64 / positives as f64
        },
        ppv: (alarms > 0).then(|| tp as f64 / alarms as f64),
        true_positives: tp,
        alarms,
        lead_hours: median(&mut leads),
    }
}

/// Alarm iff the score ever reaches `threshold`.
pub fn apply_threshold(traces: &[ScoreTrace], threshold: f64) -> Result<ThresholdResult> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no score traces".into()));
    }
    let outcomes = outcomes(traces, 0.0, threshold);
    let point = summarize(threshold, &outcomes, positives(traces));
    Ok(ThresholdResult {
        tpr: point.tpr,
        ppv: point.ppv,
        outcomes,
    })
}

/// Thresholds at which some patient's alarm status flips, plus 0.
pub fn default_grid(traces: &[ScoreTrace]) -> Vec<f64> {
    let mut grid: Vec<f64> = traces
        .iter()
        .map(ScoreTrace::max_risk)
        .filter(|r| r.is_finite())
        .collect();
    grid.push(0.0);
    normalize_grid(grid)
}

/// `n + 1` evenly spaced thresholds on `[0, 1]`.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

fn normalize_grid(mut grid: Vec<f64>) -> Vec<f64> {
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

/// Area under PPV as a function of TPR. Ties in TPR keep the best PPV, the
/// leftmost point is extended flat to TPR 0 and segments are trapezoids.
pub fn pr_auc(points: &[CurvePoint]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.ppv.map(|v| (p.tpr, v)))
        .collect();
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    pairs.dedup_by(|next, kept| next.0 == kept.0);
    let mut area = pairs[0].0 * pairs[0].1;
    for w in pairs.windows(2) {
        area += (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1);
    }
    area.clamp(0.0, 1.0)
}

fn sweep(traces: &[ScoreTrace], lower: f64, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no score traces".into()));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument(
            "threshold grid must be finite".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "threshold grid must be strictly increasing".into(),
        ));
    }
    let pos = positives(traces);
    let points: Vec<CurvePoint> = grid
        .iter()
        .map(|&th| summarize(th, &outcomes(traces, lower, th), pos))
        .collect();
    debug_assert!(points.windows(2).all(|w| w[1].tpr <= w[0].tpr));
    Ok(points)
}

/// TPR/PPV over a threshold sweep. `grid` defaults to [`default_grid`].
pub fn roc_curve(traces: &[ScoreTrace], grid: Option<&[f64]>) -> Result<MetricCurve> {
    let grid = grid
        .map(|g| g.to_vec())
        .unwrap_or_else(|| default_grid(traces));
    let points = sweep(traces, 0.0, &grid)?;
    let auc = pr_auc(&points);
    Ok(MetricCurve { points, auc })
}

/// Two-threshold rule: a patient is discharged the first time the score
/// drops below `lower` and alarms the first time it reaches the upper
/// threshold, whichever comes first.
pub fn dual_threshold_eval(
    traces: &[ScoreTrace],
    lower: f64,
    grid: Option<&[f64]>,
) -> Result<MetricCurve> {
    if !(0.0..1.0).contains(&lower) {
        return Err(Error::InvalidArgument(format!(
            "lower threshold {lower} outside [0, 1)"
        )));
    }
    let grid = match grid {
        Some(g) => g.to_vec(),
        None if lower == 0.0 => default_grid(traces),
        None => {
            let mut g: Vec<f64> = default_grid(traces)
                .into_iter()
                .filter(|&t| t > lower)
                .collect();
            if g.is_empty() {
                g.push(1.0);
            }
            g
        }
    };
    if lower > 0.0 && grid.iter().any(|&u| u <= lower) {
        return Err(Error::InvalidArgument(format!(
            "lower threshold {lower} must lie below every upper threshold"
        )));
    }
    let points = sweep(traces, lower, &grid)?;
    let auc = pr_auc(&points);
    Ok(MetricCurve { points, auc })
}

/// Points of the sweep whose true-positive count is within one patient of
/// `target_tpr`, each with its median lead time.
pub fn timeliness_curve(
    traces: &[ScoreTrace],
    target_tpr: f64,
    grid: Option<&[f64]>,
) -> Result<MetricCurve> {
    if !(0.0..=1.0).contains(&target_tpr) {
        return Err(Error::InvalidArgument(format!(
            "target TPR {target_tpr} outside [0, 1]"
        )));
    }
    let grid = grid
        .map(|g| g.to_vec())
        .unwrap_or_else(|| default_grid(traces));
    let all = sweep(traces, 0.0, &grid)?;
    let target_tp = target_tpr * positives(traces) as f64;
    let points: Vec<CurvePoint> = all
        .iter()
        .copied()
        .filter(|p| (p.true_positives as f64 - target_tp).abs() <= 1.0)
        .collect();
    if points.is_empty() {
        let best = all
            .iter()
            .map(|p| p.tpr)
            .min_by(|a, b| (a - target_tpr).abs().total_cmp(&(b - target_tpr).abs()))
            .unwrap_or(0.0);
        return Err(Error::UnreachableTpr {
            target: target_tpr,
            best,
        });
    }
    let auc = pr_auc(&points);
    Ok(MetricCurve { points, auc })
}

/// The point of a timeliness curve closest to `target_tpr`; ties go to the
/// higher PPV.
pub fn operating_point(curve: &MetricCurve, target_tpr: f64) -> Option<CurvePoint> {
    curve.points.iter().copied().min_by(|a, b| {
        (a.tpr - target_tpr)
            .abs()
            .total_cmp(&(b.tpr - target_tpr).abs())
            .then(b.ppv.unwrap_or(0.0).total_cmp(&a.ppv.unwrap_or(0.0)))
    })
}

/// One point of the lead-requirement sweep: alarms only count when raised at
/// least `min_lead` hours before the endpoint, and the threshold is the one
/// holding TPR at the target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeadPoint {
    pub min_lead: f64,
    pub threshold: f64,
    pub tpr: f64,
    pub ppv: Option<f64>,
    pub median_lead: Option<f64>,
}

/// Required leads of the default sweep: every half hour up to two days.
pub fn default_lead_grid() -> Vec<f64> {
    (0..=96).map(|i| i as f64 * 0.5).collect()
}

/// The prefix of `trace` scored at least `lead` hours before its endpoint.
fn scores_before(trace: &ScoreTrace, lead: f64) -> &[ScorePoint] {
    let cut = trace.endpoint_time - lead;
    &trace.points[..trace.points.partition_point(|p| p.time <= cut)]
}

/// Trade-off between alarm timeliness and PPV at fixed TPR. For each
/// required lead `tau`, every trace is cut at `endpoint - tau` and the
/// threshold is set to the `round(target_tpr * P)`-th largest peak score
/// among the ICU stays. The sweep stops at the first `tau` where too few ICU
/// stays have any score left.
pub fn lead_tradeoff(
    traces: &[ScoreTrace],
    target_tpr: f64,
    leads: &[f64],
) -> Result<Vec<LeadPoint>> {
    if traces.is_empty() {
        return Err(Error::InvalidArgument("no score traces".into()));
    }
    if !(0.0..=1.0).contains(&target_tpr) || target_tpr == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "target TPR {target_tpr} outside (0, 1]"
        )));
    }
    if leads.iter().any(|l| !l.is_finite() || *l < 0.0) || leads.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "required leads must be nonnegative and increasing".into(),
        ));
    }
    let pos = positives(traces);
    let want = ((target_tpr * pos as f64).round() as usize).max(1);
    let mut out = Vec::new();
    for &tau in leads {
        let peak = |t: &ScoreTrace| {
            scores_before(t, tau)
                .iter()
                .map(|p| p.risk)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut peaks: Vec<f64> = traces
            .iter()
            .filter(|t| t.outcome == Outcome::Icu)
            .map(peak)
            .filter(|r| r.is_finite())
            .collect();
        if peaks.len() < want {
            break;
        }
        peaks.sort_by(|a, b| b.total_cmp(a));
        let threshold = peaks[want - 1];
        let mut alarms = 0;
        let mut leads_tp = Vec::new();
        for t in traces {
            if let Some(p) = scores_before(t, tau).iter().find(|p| p.risk >= threshold) {
                alarms += 1;
                if t.outcome == Outcome::Icu {
                    leads_tp.push(t.endpoint_time - p.time);
                }
            }
        }
        out.push(LeadPoint {
            min_lead: tau,
            threshold,
            tpr: leads_tp.len() as f64 / pos as f64,
            ppv: Some(leads_tp.len() as f64 / alarms as f64),
            median_lead: median(&mut leads_tp),
        });
    }
    if out.is_empty() {
        return Err(Error::UnreachableTpr {
            target: target_tpr,
            best: 0.0,
        });
    }
    Ok(out)
}

/// The earliest-alarming point of a lead sweep whose PPV is at least `ppv`.
pub fn lead_at_ppv(sweep: &[LeadPoint], ppv: f64) -> Option<LeadPoint> {
    sweep
        .iter()
        .rev()
        .find(|p| p.ppv.is_some_and(|v| v >= ppv))
        .copied()
}

/// Memoryless score: at each event the latest value of every stream is
/// scored as an independent Gaussian draw from each epoch's marginal, mixed
/// over the initial-epoch law, phenotypes and statuses.
pub fn snapshot_baseline(params: &ModelParams, record: &PatientRecord) -> Result<Vec<ScorePoint>> {
    let y = params.encoder.encode(&record.profile)?;
    let log_gamma = gating_log_probabilities(&y, &params.gating);
    let d = params.streams();
    if record.events.is_empty() {
        return Ok(vec![ScorePoint {
            time: 0.0,
            risk: params.prior_icu,
        }]);
    }
    let mut latest: Vec<Option<f64>> = vec![None; d];
    let mut out = Vec::with_capacity(record.events.len());
    for e in &record.events {
        if e.stream >= d {
            return Err(Error::InvalidArgument(format!(
                "stream {} outside the model",
                e.stream
            )));
        }
        latest[e.stream] = Some(params.standardizer.apply(e).value);
        let mut class = [0.0; 2];
        for (v, slot) in class.iter_mut().enumerate() {
            let models = params.models(Outcome::from_index(v));
            let terms: Vec<f64> = models
                .iter()
                .zip(&log_gamma)
                .map(|(m, lg)| {
                    let per_epoch: Vec<f64> = m
                        .epochs
                        .iter()
                        .zip(&m.initial.0)
                        .filter(|(_, w)| **w > 0.0)
                        .map(|(k, w)| {
                            let mut ll = w.ln();
                            for (u, x) in latest.iter().enumerate() {
                                if let Some(x) = x {
                                    let var = k.marginal_var(u);
                                    let r = x - k.mean[u];
                                    ll -= 0.5
                                        * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var);
                                }
                            }
                            ll
                        })
                        .collect();
                    lg + log_sum_exp(&per_epoch)
                })
                .collect();
            *slot = log_sum_exp(&terms);
        }
        out.push(ScorePoint {
            time: e.time,
            risk: posterior_risk(class[0], class[1], params.prior_icu)?,
        });
    }
    Ok(out)
}

/// Full sequential scoring under a one-phenotype, one-epoch model.
pub fn stationary_baseline(
    params: &ModelParams,
    record: &PatientRecord,
) -> Result<Vec<ScorePoint>> {
    if params.phenotypes != 1 || params.epochs != 1 {
        return Err(Error::InvalidArgument(format!(
            "stationary baseline needs a 1-phenotype 1-epoch model, got G={} K={}",
            params.phenotypes, params.epochs
        )));
    }
    score_trajectory(params, record)
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument("labelings differ in length".into()));
    }
    let n = a.len();
    let ra = a.iter().max().map_or(0, |m| m + 1);
    let rb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ra * rb];
    for (&x, &y) in a.iter().zip(b) {
        table[x * rb + y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1) / 2) as f64;
    let index: f64 = table.iter().map(|&c| pairs(c)).sum();
    let rows: f64 = (0..ra)
        .map(|i| pairs(table[i * rb..(i + 1) * rb].iter().sum()))
        .sum();
    let cols: f64 = (0..rb)
        .map(|j| pairs((0..ra).map(|i| table[i * rb + j]).sum()))
        .sum();
    let total = pairs(n as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}
