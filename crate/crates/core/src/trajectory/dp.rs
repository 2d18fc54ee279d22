use std::ops::Range;

use super::{cell_of, DurationTable, Horizon, TrajectoryModel};
use crate::error::{Error, Result};
use crate::kernel::PreparedKernel;
use crate::likelihood::{IncrementalSegment, Observation, Workspace};
use crate::linalg::log_sum_exp;

/// Model pieces precomputed once per evaluation.
pub(crate) struct PreparedModel {
    pub kernels: Vec<PreparedKernel>,
    pub durations: Vec<DurationTable>,
    pub log_initial: Vec<f64>,
    pub t_max: usize,
}

impl PreparedModel {
    pub fn new(model: &TrajectoryModel) -> Self {
        Self {
            kernels: model.epochs.iter().map(|e| e.prepare()).collect(),
            durations: model.durations.tables(),
            log_initial: model.initial.0.iter().map(|p| p.ln()).collect(),
            t_max: model.durations.t_max,
        }
    }

    fn epochs(&self) -> usize {
        self.kernels.len()
    }
}

fn check_observations(obs: &[Observation], streams: usize) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for o in obs {
        if !o.time.is_finite() || !o.value.is_finite() || o.time < 0.0 {
            return Err(Error::NonFinite(format!(
                "observation at t={} with value {}",
                o.time, o.value
            )));
        }
        if o.time < last {
            return Err(Error::InvalidArgument(
                "observations must be time-sorted".into(),
            ));
        }
        if o.stream >= streams {
            return Err(Error::InvalidArgument(format!(
                "stream {} out of range",
                o.stream
            )));
        }
        last = o.time;
    }
    Ok(())
}

/// `starts[c]` is the index of the first observation in cell `c` or later.
fn cell_starts(obs: &[Observation], cells: usize) -> Vec<usize> {
    let mut starts = vec![obs.len(); cells + 1];
    for (i, o) in obs.iter().enumerate().rev() {
        starts[cell_of(o.time, cells)] = i;
    }
    for c in (0..cells).rev() {
        starts[c] = starts[c].min(starts[c + 1]);
    }
    starts
}

/// Segment log marginals `S[k][s][len]` for starts `s >= first_start`.
struct SegmentTable {
    first_start: usize,
    cells: usize,
    t_max: usize,
    values: Vec<f64>,
}

impl SegmentTable {
    fn build(
        model: &PreparedModel,
        obs: &[Observation],
        starts: &[usize],
        first_start: usize,
        cells: usize,
    ) -> Self {
        let t_max = model.t_max;
        let width = cells - first_start;
        let mut values = vec![f64::NAN; model.epochs() * width * t_max];
        let mut chain = IncrementalSegment::new();
        for (k, kernel) in model.kernels.iter().enumerate() {
            for s in first_start..cells {
                chain.clear();
                let mut dense = false;
                let last_end = cells.min(s + t_max);
                for e in (s + 1)..=last_end {
                    let value = if dense {
                        dense_value(&obs[starts[s]..starts[e]], model, k)
                    } else {
                        let mut failed = false;
                        for o in &obs[starts[e - 1]..starts[e]] {
                            if chain.push(o, kernel).is_err() {
                                failed = true;
                                break;
                            }
                        }
                        if failed {
                            dense = true;
                            dense_value(&obs[starts[s]..starts[e]], model, k)
                        } else {
                            chain.log_marginal()
                        }
                    };
                    values[(k * width + (s - first_start)) * t_max + (e - s - 1)] = value;
                }
            }
        }
        Self {
            first_start,
            cells,
            t_max,
            values,
        }
    }

    #[inline]
    fn get(&self, k: usize, s: usize, len: usize) -> f64 {
        let width = self.cells - self.first_start;
        self.values[(k * width + (s - self.first_start)) * self.t_max + (len - 1)]
    }
}

/// Dense fallback once the incremental factor hits a non-positive pivot. A
/// failure after the whole nugget ladder counts as a zero-probability segment.
fn dense_value(obs: &[Observation], model: &PreparedModel, k: usize) -> f64 {
    if obs.is_empty() {
        return 0.0;
    }
    let mut ws = Workspace::default();
    match ws.factor(obs, &model.kernels[k]) {
        Ok(()) => ws.log_marginal(obs.len()),
        Err(_) => f64::NEG_INFINITY,
    }
}

fn check_horizon(cells: usize, model: &PreparedModel) -> Result<()> {
    let k = model.epochs();
    if cells > k * model.t_max {
        return Err(Error::HorizonTooLong {
            cells,
            epochs: k,
            max_duration: model.t_max,
        });
    }
    Ok(())
}

/// Fills `alpha[k][b]` for boundaries `b in from..cells`, where `alpha[k][b]`
/// is the log joint of all observations before cell `b` and epoch `k`
/// starting at `b`.
fn forward_columns(
    model: &PreparedModel,
    table: &SegmentTable,
    alpha: &mut [Vec<f64>],
    from: usize,
    cells: usize,
    terms: &mut Vec<f64>,
) {
    let k_count = model.epochs();
    for column in alpha.iter_mut() {
        column.resize(cells, f64::NEG_INFINITY);
    }
    for b in from.max(1)..cells {
        alpha[0][b] = f64::NEG_INFINITY;
        for k in 1..k_count {
            terms.clear();
            let prev = k - 1;
            for s in b.saturating_sub(model.t_max)..b {
                let a = alpha[prev][s];
                if a == f64::NEG_INFINITY {
                    continue;
                }
                let len = b - s;
                terms.push(a + model.durations[prev].log_pmf[len] + table.get(prev, s, len));
            }
            alpha[k][b] = log_sum_exp(terms);
        }
    }
}

/// Log weight of the segment that runs through the last cell.
fn final_term(model: &PreparedModel, k: usize, len: usize, terminal: bool) -> f64 {
    let d = &model.durations[k];
    if terminal {
        if k + 1 == model.epochs() {
            d.log_pmf[len]
        } else {
            f64::NEG_INFINITY
        }
    } else {
        d.log_survival[len]
    }
}

fn finish(
    model: &PreparedModel,
    table: &SegmentTable,
    alpha: &[Vec<f64>],
    cells: usize,
    terminal: bool,
    terms: &mut Vec<f64>,
) -> f64 {
    terms.clear();
    for k in 0..model.epochs() {
        for s in cells.saturating_sub(model.t_max)..cells {
            let a = alpha[k][s];
            if a == f64::NEG_INFINITY {
                continue;
            }
            let len = cells - s;
            terms.push(a + final_term(model, k, len, terminal) + table.get(k, s, len));
        }
    }
    log_sum_exp(terms)
}

/// Forward state of one `(status, phenotype)` component, reusable across
/// calls with a growing observation prefix.
///
/// `alpha` columns for boundaries before the cell of the latest observation
/// depend only on earlier cells, so they are kept; each update only builds
/// segments that can reach the new cells.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    alpha: Vec<Vec<f64>>,
    settled: usize,
    last_time: f64,
}

impl ForwardCache {
    pub fn new(model: &TrajectoryModel) -> Self {
        let alpha = model.initial.0.iter().map(|p| vec![p.ln()]).collect();
        Self {
            alpha,
            settled: 1,
            last_time: 0.0,
        }
    }

    /// Log likelihood of `obs` (all observations so far, time-sorted, none
    /// after `t`) with the current epoch censored at `t`.
    pub fn update(&mut self, model: &TrajectoryModel, obs: &[Observation], t: f64) -> Result<f64> {
        let prepared = PreparedModel::new(model);
        self.update_prepared(&prepared, model.streams(), obs, t)
    }

    pub(crate) fn update_prepared(
        &mut self,
        model: &PreparedModel,
        streams: usize,
        obs: &[Observation],
        t: f64,
    ) -> Result<f64> {
        if !t.is_finite() || t < self.last_time {
            return Err(Error::OutOfOrder {
                time: t,
                last: self.last_time,
            });
        }
        check_observations(obs, streams)?;
        if let Some(last) = obs.last() {
            if last.time > t {
                return Err(Error::InvalidArgument(format!(
                    "observation at t={} after the scoring time {t}",
                    last.time
                )));
            }
        }
        let cells = Horizon::Censored(t).cells();
        check_horizon(cells, model)?;
        let starts = cell_starts(obs, cells);
        let first_start = self.settled.saturating_sub(model.t_max);
        let table = SegmentTable::build(model, obs, &starts, first_start, cells);
        let mut terms = Vec::new();
        forward_columns(
            model,
            &table,
            &mut self.alpha,
            self.settled,
            cells,
            &mut terms,
        );
        let ll = finish(model, &table, &self.alpha, cells, false, &mut terms);
        self.settled = cells;
        self.last_time = t;
        Ok(ll)
    }
}

/// `log P(observations in [0, t] | model)` with the in-progress epoch
/// right-censored at `t`.
pub fn trajectory_log_likelihood(
    obs: &[Observation],
    t: f64,
    model: &TrajectoryModel,
) -> Result<f64> {
    ForwardCache::new(model).update(model, obs, t)
}

/// Log likelihood of a finished stay whose final epoch `K` ends exactly at
/// `endpoint`.
pub fn terminal_log_likelihood(
    obs: &[Observation],
    endpoint: f64,
    model: &TrajectoryModel,
) -> Result<f64> {
    Ok(segment_posteriors(obs, Horizon::Terminal(endpoint), model, f64::INFINITY)?.log_likelihood)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPosterior {
    pub epoch: usize,
    /// First hour cell of the segment.
    pub start: usize,
    /// One past the last hour cell.
    pub end: usize,
    /// Index range of the observations inside the segment.
    pub observations: Range<usize>,
    /// `true` when the duration entered through its pmf, `false` when it was
    /// right-censored at the horizon.
    pub completed: bool,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPosterior {
    pub log_likelihood: f64,
    pub cells: usize,
    /// Posterior of the starting epoch.
    pub initial: Vec<f64>,
    pub segments: Vec<SegmentPosterior>,
}

/// Forward-backward posteriors over `(epoch, start, end)` segments. Segments
/// with weight below `min_weight` are dropped from the output (pass `0.0` to
/// keep all; `f64::INFINITY` to compute only the likelihood).
pub fn segment_posteriors(
    obs: &[Observation],
    horizon: Horizon,
    model: &TrajectoryModel,
    min_weight: f64,
) -> Result<TrajectoryPosterior> {
    let prepared = PreparedModel::new(model);
    posteriors_prepared(&prepared, model.streams(), obs, horizon, min_weight)
}

pub(crate) fn posteriors_prepared(
    model: &PreparedModel,
    streams: usize,
    obs: &[Observation],
    horizon: Horizon,
    min_weight: f64,
) -> Result<TrajectoryPosterior> {
    check_observations(obs, streams)?;
    let (terminal, limit) = match horizon {
        Horizon::Censored(t) => (false, t),
        Horizon::Terminal(e) => (true, e),
    };
    if let Some(last) = obs.last() {
        if last.time > limit {
            return Err(Error::InvalidArgument(format!(
                "observation at t={} beyond the horizon {limit}",
                last.time
            )));
        }
    }
    let cells = horizon.cells();
    check_horizon(cells, model)?;
    let k_count = model.epochs();
    let t_max = model.t_max;
    let starts = cell_starts(obs, cells);
    let table = SegmentTable::build(model, obs, &starts, 0, cells);
    let mut alpha: Vec<Vec<f64>> = model.log_initial.iter().map(|&l| vec![l]).collect();
    let mut terms = Vec::new();
    forward_columns(model, &table, &mut alpha, 1, cells, &mut terms);
    let ll = finish(model, &table, &alpha, cells, terminal, &mut terms);
    if !ll.is_finite() {
        return Err(Error::NonFinite(format!(
            "trajectory log likelihood is {ll} over {cells} hour cells"
        )));
    }
    if min_weight == f64::INFINITY {
        return Ok(TrajectoryPosterior {
            log_likelihood: ll,
            cells,
            initial: Vec::new(),
            segments: Vec::new(),
        });
    }

    // beta[k][s]: log probability of everything from cell s on, given epoch k
    // starts at s.
    let mut beta = vec![vec![f64::NEG_INFINITY; cells]; k_count];
    for s in (0..cells).rev() {
        for k in 0..k_count {
            terms.clear();
            let len = cells - s;
            if len <= t_max {
                let f = final_term(model, k, len, terminal);
                if f > f64::NEG_INFINITY {
                    terms.push(f + table.get(k, s, len));
                }
            }
            if k + 1 < k_count {
                for e in (s + 1)..cells.min(s + t_max + 1) {
                    let b = beta[k + 1][e];
                    if b == f64::NEG_INFINITY {
                        continue;
                    }
                    let len = e - s;
                    terms.push(model.durations[k].log_pmf[len] + table.get(k, s, len) + b);
                }
            }
            beta[k][s] = log_sum_exp(&terms);
        }
    }

    let initial = (0..k_count)
        .map(|k| (alpha[k][0] + beta[k][0] - ll).exp())
        .collect();
    let mut segments = Vec::new();
    for k in 0..k_count {
        for s in 0..cells {
            let a = alpha[k][s];
            if a == f64::NEG_INFINITY {
                continue;
            }
            let last_end = cells.min(s + t_max);
            for e in (s + 1)..=last_end {
                let len = e - s;
                let (tail, completed) = if e == cells {
                    (final_term(model, k, len, terminal), terminal)
                } else if k + 1 < k_count {
                    (model.durations[k].log_pmf[len] + beta[k + 1][e], true)
                } else {
                    continue;
                };
                let w = (a + table.get(k, s, len) + tail - ll).exp();
                if w > 0.0 && w >= min_weight {
                    segments.push(SegmentPosterior {
                        epoch: k,
                        start: s,
                        end: e,
                        observations: starts[s]..starts[e],
                        completed,
                        weight: w,
                    });
                }
            }
        }
    }
    Ok(TrajectoryPosterior {
        log_likelihood: ll,
        cells,
        initial,
        segments,
    })
}
