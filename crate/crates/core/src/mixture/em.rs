use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::init::{initial_responsibilities, initial_trajectory, InitSettings};
use super::optim::{maximize, numeric_gradient, solve_damped, Bound};
use super::{gating_log_probabilities, GatingParams, ModelParams, MODEL_SCHEMA_VERSION};
use crate::cohort::{Cohort, Outcome, StaticEncoder};
use crate::error::{Error, Result};
use crate::kernel::{EpochKernelParams, LengthScaleBounds};
use crate::likelihood::{Observation, Standardizer, Workspace};
use crate::linalg::log_sum_exp;
use crate::trajectory::{
    posteriors_prepared, DurationTable, Horizon, InitialEpochDist, NegBinomial, PreparedModel,
    TrajectoryModel, DEFAULT_T_MAX,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood gain of an iteration drops below this.
    pub tol: f64,
    /// Rank of the low-rank part of each task covariance.
    pub rank: usize,
    pub t_max: usize,
    /// Quasi-Newton steps per kernel refit.
    pub kernel_steps: usize,
    /// Newton steps per gate refit.
    pub gating_steps: usize,
    /// Segment posteriors below this weight are left out of the M-step.
    pub min_segment_weight: f64,
    pub kmeans_restarts: usize,
    /// Fixed prior of the deteriorating class; `None` uses the training fraction.
    pub prior_icu: Option<f64>,
    pub init_length_scale: f64,
    pub length_scale_bounds: LengthScaleBounds,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: 100,
            tol: 1e-4,
            rank: 3,
            t_max: DEFAULT_T_MAX,
            kernel_steps: 25,
            gating_steps: 5,
            min_segment_weight: 1e-3,
            kmeans_restarts: 5,
            prior_icu: None,
            init_length_scale: 4.0,
            length_scale_bounds: LengthScaleBounds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Observed-data log likelihood after initialization and after every
    /// accepted iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    pub phenotypes: usize,
    pub epochs: usize,
    /// Iterations whose full update lowered the likelihood and were shortened.
    pub shortened_steps: usize,
}

/// One training stay in model units.
pub(crate) struct Stay {
    pub obs: Vec<Observation>,
    pub endpoint: f64,
    pub outcome: Outcome,
    pub features: Vec<f64>,
}

/// A segment hypothesis with its joint weight `P(z, segment | data)`.
struct WeightedSegment {
    epoch: usize,
    len: usize,
    obs: std::ops::Range<usize>,
    completed: bool,
    weight: f64,
}

struct PhenotypeStats {
    initial: Vec<f64>,
    segments: Vec<WeightedSegment>,
}

struct PatientStats {
    log_likelihood: f64,
    responsibilities: Vec<f64>,
    phenotypes: Vec<Option<PhenotypeStats>>,
}

struct Prepared {
    models: [Vec<PreparedModel>; 2],
}

impl Prepared {
    fn new(params: &ModelParams) -> Self {
        Self {
            models: [
                params.stable.iter().map(PreparedModel::new).collect(),
                params
                    .deteriorating
                    .iter()
                    .map(PreparedModel::new)
                    .collect(),
            ],
        }
    }
}

fn e_step_patient(
    stay: &Stay,
    id: &str,
    params: &ModelParams,
    prepared: &Prepared,
    min_weight: f64,
    iteration: usize,
) -> Result<PatientStats> {
    let log_gamma = gating_log_probabilities(&stay.features, &params.gating);
    let models = &prepared.models[stay.outcome.index()];
    let mut posts = Vec::with_capacity(models.len());
    let mut joint = Vec::with_capacity(models.len());
    for (z, model) in models.iter().enumerate() {
        if log_gamma[z] == f64::NEG_INFINITY {
            posts.push(None);
            joint.push(f64::NEG_INFINITY);
            continue;
        }
        match posteriors_prepared(
            model,
            params.streams(),
            &stay.obs,
            Horizon::Terminal(stay.endpoint),
            min_weight,
        ) {
            Ok(p) => {
                joint.push(log_gamma[z] + p.log_likelihood);
                posts.push(Some(p));
            }
            Err(Error::NonFinite(_)) => {
                joint.push(f64::NEG_INFINITY);
                posts.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let mix = log_sum_exp(&joint);
    if !mix.is_finite() {
        return Err(Error::NonFinite(format!(
            "EM iteration {iteration}: stay `{id}` has zero likelihood under every phenotype"
        )));
    }
    let responsibilities: Vec<f64> = joint.iter().map(|j| (j - mix).exp()).collect();
    let phenotypes = posts
        .into_iter()
        .zip(&responsibilities)
        .map(|(post, &r)| {
            let post = post?;
            if r < min_weight {
                return None;
            }
            Some(PhenotypeStats {
                initial: post.initial.iter().map(|p| p * r).collect(),
                segments: post
                    .segments
                    .into_iter()
                    .filter(|s| s.weight * r >= min_weight)
                    .map(|s| WeightedSegment {
                        epoch: s.epoch,
                        len: s.end - s.start,
                        obs: s.observations,
                        completed: s.completed,
                        weight: s.weight * r,
                    })
                    .collect(),
            })
        })
        .collect();
    Ok(PatientStats {
        log_likelihood: mix + params.log_prior(stay.outcome),
        responsibilities,
        phenotypes,
    })
}

fn e_step(
    stays: &[Stay],
    ids: &[&str],
    params: &ModelParams,
    min_weight: f64,
    iteration: usize,
) -> Result<(f64, Vec<PatientStats>)> {
    let prepared = Prepared::new(params);
    let parts: Vec<Result<PatientStats>> = stays
        .par_iter()
        .zip(ids.par_iter())
        .map(|(s, id)| e_step_patient(s, id, params, &prepared, min_weight, iteration))
        .collect();
    let mut total = 0.0;
    let mut stats = Vec::with_capacity(parts.len());
    for p in parts {
        let p = p?;
        total += p.log_likelihood;
        stats.push(p);
    }
    Ok((total, stats))
}

// ---------------------------------------------------------------- M-step

fn update_initial(current: &InitialEpochDist, mass: &[f64]) -> InitialEpochDist {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return current.clone();
    }
    let floor = 1e-10;
    let raw: Vec<f64> = mass.iter().map(|m| m / total + floor).collect();
    let norm: f64 = raw.iter().sum();
    InitialEpochDist(raw.into_iter().map(|p| p / norm).collect())
}

fn duration_objective(law: &NegBinomial, t_max: usize, completed: &[f64], censored: &[f64]) -> f64 {
    let table = DurationTable::new(law, t_max);
    let mut q = 0.0;
    for len in 1..=t_max {
        if completed[len] > 0.0 {
            q += completed[len] * table.log_pmf[len];
        }
        if censored[len] > 0.0 {
            q += censored[len] * table.log_survival[len];
        }
    }
    q
}

const LOG_R_RANGE: (f64, f64) = (-4.6, 9.2);
const LOGIT_P_RANGE: (f64, f64) = (-30.0, 30.0);

fn to_nb_coords(law: &NegBinomial) -> [f64; 2] {
    [law.r.ln(), (law.p / (1.0 - law.p)).ln()]
}

fn from_nb_coords(x: &[f64]) -> NegBinomial {
    let r = x[0].clamp(LOG_R_RANGE.0, LOG_R_RANGE.1).exp();
    let z = x[1].clamp(LOGIT_P_RANGE.0, LOGIT_P_RANGE.1);
    let p = (1.0 / (1.0 + (-z).exp())).clamp(1e-12, 1.0 - 1e-12);
    NegBinomial { r, p }
}

/// Moment match on completed durations, then a quasi-Newton refinement of
/// the expected complete-data log likelihood. The current law is kept unless
/// the new one scores strictly higher.
fn update_duration(
    current: &NegBinomial,
    t_max: usize,
    completed: &[f64],
    censored: &[f64],
) -> NegBinomial {
    let total: f64 = completed.iter().chain(censored).sum();
    if !(total > 1e-9) {
        return *current;
    }
    let q_now = duration_objective(current, t_max, completed, censored);
    let mut start = *current;
    let wc: f64 = completed.iter().sum();
    if wc > 1e-9 {
        let mean_x = (1..=t_max)
            .map(|l| completed[l] * (l - 1) as f64)
            .sum::<f64>()
            / wc;
        let var_x = (1..=t_max)
            .map(|l| completed[l] * ((l - 1) as f64 - mean_x).powi(2))
            .sum::<f64>()
            / wc;
        let mean_x = mean_x.max(1e-3);
        let moment = if var_x > mean_x * 1.001 {
            let p = mean_x / var_x;
            NegBinomial {
                r: (mean_x * p / (1.0 - p)).clamp(1e-2, 1e4),
                p,
            }
        } else {
            NegBinomial::with_mean(mean_x + 1.0, 1e3)
        };
        if duration_objective(&moment, t_max, completed, censored) > q_now {
            start = moment;
        }
    }
    let objective =
        |x: &[f64]| duration_objective(&from_nb_coords(x), t_max, completed, censored) / total;
    let f = |x: &[f64]| {
        let mut obj =
            |y: &[f64]| duration_objective(&from_nb_coords(y), t_max, completed, censored) / total;
        let v = obj(x);
        if !v.is_finite() {
            return None;
        }
        Some((v, numeric_gradient(&mut obj, x, 1e-6)))
    };
    let bounds = [
        Bound {
            index: 0,
            lower: LOG_R_RANGE.0,
            upper: LOG_R_RANGE.1,
        },
        Bound {
            index: 1,
            lower: LOGIT_P_RANGE.0,
            upper: LOGIT_P_RANGE.1,
        },
    ];
    let (x, _) = maximize(f, to_nb_coords(&start).to_vec(), &bounds, 20);
    let refined = from_nb_coords(&x);
    if objective(&x) * total > q_now {
        refined
    } else {
        *current
    }
}

type SegmentRef<'a> = (&'a [Observation], f64);

fn kernel_objective(
    theta: &[f64],
    streams: usize,
    rank: usize,
    segments: &[SegmentRef<'_>],
    total: f64,
    ws: &mut Workspace,
) -> Option<(f64, Vec<f64>)> {
    let params = EpochKernelParams::from_unconstrained(theta, streams, rank);
    let prepared = params.prepare();
    let mut grad = vec![0.0; theta.len()];
    let mut value = 0.0;
    for &(obs, w) in segments {
        let w = w / total;
        match ws.accumulate_grad(obs, &params, &prepared, w, &mut grad) {
            Ok(v) => value += w * v,
            Err(_) => return None,
        }
    }
    if value.is_finite() && grad.iter().all(|g| g.is_finite()) {
        Some((value, grad))
    } else {
        None
    }
}

/// Closed-form generalized-least-squares mean, then bounded quasi-Newton
/// steps on all kernel parameters. Kept only if the weighted log marginal
/// improves.
fn update_kernel(
    current: &EpochKernelParams,
    segments: &[SegmentRef<'_>],
    steps: usize,
    bounds: &LengthScaleBounds,
) -> EpochKernelParams {
    let total: f64 = segments.iter().map(|s| s.1).sum();
    if !(total > 1e-9) {
        return current.clone();
    }
    let d = current.streams();
    let rank = current.rank;
    let mut ws = Workspace::default();
    let theta_now = current.to_unconstrained();
    let Some((q_now, _)) = kernel_objective(&theta_now, d, rank, segments, total, &mut ws) else {
        return current.clone();
    };

    let mut start = current.clone();
    let prepared = current.prepare();
    let mut info = vec![0.0; d * d];
    let mut rhs = vec![0.0; d];
    let mut ok = true;
    for &(obs, w) in segments {
        if ws
            .accumulate_gls(obs, &prepared, w / total, &mut info, &mut rhs)
            .is_err()
        {
            ok = false;
            break;
        }
    }
    if ok {
        for u in 0..d {
            if info[u * d + u] <= 1e-14 {
                for w in 0..d {
                    info[u * d + w] = 0.0;
                    info[w * d + u] = 0.0;
                }
                info[u * d + u] = 1.0;
                rhs[u] = current.mean[u];
            }
        }
        if let Some(mean) = solve_damped(&info, &rhs, d, 1e-12) {
            start.mean = mean;
        }
    }

    let ls_index = d + d * rank + d;
    let ls_bounds = [Bound {
        index: ls_index,
        lower: bounds.min.ln(),
        upper: bounds.max.ln(),
    }];
    let (theta, q_new) = maximize(
        |x| kernel_objective(x, d, rank, segments, total, &mut ws),
        start.to_unconstrained(),
        &ls_bounds,
        steps,
    );
    if q_new > q_now {
        let mut p = EpochKernelParams::from_unconstrained(&theta, d, rank);
        p.length_scale = bounds.clamp(p.length_scale);
        p
    } else {
        current.clone()
    }
}

fn update_component(
    current: &TrajectoryModel,
    stays: &[Stay],
    stats: &[PatientStats],
    outcome: Outcome,
    z: usize,
    config: &EmConfig,
) -> TrajectoryModel {
    let k_count = current.num_epochs();
    let t_max = current.t_max();
    let mut initial = vec![0.0; k_count];
    let mut completed = vec![vec![0.0; t_max + 1]; k_count];
    let mut censored = vec![vec![0.0; t_max + 1]; k_count];
    let mut kernel_data: Vec<Vec<SegmentRef<'_>>> = vec![Vec::new(); k_count];
    for (stay, st) in stays.iter().zip(stats) {
        if stay.outcome != outcome {
            continue;
        }
        let Some(ph) = &st.phenotypes[z] else {
            continue;
        };
        for (m, p) in initial.iter_mut().zip(&ph.initial) {
            *m += p;
        }
        // Hypotheses that differ only in where a boundary falls between two
        // observations share the same observation set; merge them.
        let mut ranges: Vec<(usize, usize, usize, f64)> = Vec::with_capacity(ph.segments.len());
        for seg in &ph.segments {
            if seg.completed {
                completed[seg.epoch][seg.len] += seg.weight;
            } else {
                censored[seg.epoch][seg.len] += seg.weight;
            }
            if !seg.obs.is_empty() {
                ranges.push((seg.epoch, seg.obs.start, seg.obs.end, seg.weight));
            }
        }
        ranges.sort_by_key(|a| (a.0, a.1, a.2));
        let mut i = 0;
        while i < ranges.len() {
            let (epoch, lo, hi, mut w) = ranges[i];
            let mut j = i + 1;
            while j < ranges.len() && (ranges[j].0, ranges[j].1, ranges[j].2) == (epoch, lo, hi) {
                w += ranges[j].3;
                j += 1;
            }
            kernel_data[epoch].push((&stay.obs[lo..hi], w));
            i = j;
        }
    }
    let epochs = current
        .epochs
        .iter()
        .zip(&kernel_data)
        .map(|(e, data)| update_kernel(e, data, config.kernel_steps, &config.length_scale_bounds))
        .collect();
    let laws = current
        .durations
        .epochs
        .iter()
        .enumerate()
        .map(|(k, law)| update_duration(law, t_max, &completed[k], &censored[k]))
        .collect();
    TrajectoryModel {
        epochs,
        durations: crate::trajectory::DurationParams {
            t_max,
            epochs: laws,
        },
        initial: update_initial(&current.initial, &initial),
    }
}

fn gating_objective(w: &GatingParams, stays: &[Stay], targets: &[&[f64]]) -> f64 {
    stays
        .iter()
        .zip(targets)
        .map(|(s, r)| {
            let lg = gating_log_probabilities(&s.features, w);
            r.iter()
                .zip(&lg)
                .filter(|(t, _)| **t > 0.0)
                .map(|(t, l)| t * l)
                .sum::<f64>()
        })
        .sum()
}

/// Damped Newton ascent on the weighted multinomial-logistic log likelihood
/// of the phenotype responsibilities. Row 0 stays at zero.
pub(crate) fn update_gating(
    current: &GatingParams,
    stays: &[Stay],
    targets: &[&[f64]],
    steps: usize,
) -> GatingParams {
    let g = current.phenotypes();
    let f = current.features();
    if g < 2 {
        return current.clone();
    }
    let free = g - 1;
    let dim = free * f;
    let mut w = current.clone();
    let mut q = gating_objective(&w, stays, targets);
    for _ in 0..steps {
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        for (s, r) in stays.iter().zip(targets) {
            let gamma: Vec<f64> = gating_log_probabilities(&s.features, &w)
                .into_iter()
                .map(f64::exp)
                .collect();
            let y = &s.features;
            for a in 0..free {
                let diff = r[a + 1] - gamma[a + 1];
                for (i, yi) in y.iter().enumerate() {
                    grad[a * f + i] += diff * yi;
                }
                for b in 0..free {
                    let c = gamma[a + 1] * (if a == b { 1.0 } else { 0.0 } - gamma[b + 1]);
                    if c == 0.0 {
                        continue;
                    }
                    for (i, yi) in y.iter().enumerate() {
                        if *yi == 0.0 {
                            continue;
                        }
                        let row = (a * f + i) * dim + b * f;
                        for (j, yj) in y.iter().enumerate() {
                            hess[row + j] += c * yi * yj;
                        }
                    }
                }
            }
        }
        let Some(step) = solve_damped(&hess, &grad, dim, 1e-6) else {
            break;
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let mut trial = w.clone();
            for a in 0..free {
                for i in 0..f {
                    trial.weights[a + 1][i] += scale * step[a * f + i];
                }
            }
            let qt = gating_objective(&trial, stays, targets);
            if qt.is_finite() && qt > q {
                let gain = qt - q;
                w = trial;
                q = qt;
                improved = gain > 1e-10 * q.abs().max(1.0);
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            break;
        }
    }
    w
}

fn m_step(
    params: &ModelParams,
    stays: &[Stay],
    stats: &[PatientStats],
    config: &EmConfig,
) -> ModelParams {
    let mut next = params.clone();
    for outcome in [Outcome::Discharged, Outcome::Icu] {
        let updated: Vec<TrajectoryModel> = params
            .models(outcome)
            .iter()
            .enumerate()
            .map(|(z, m)| update_component(m, stays, stats, outcome, z, config))
            .collect();
        *next.models_mut(outcome) = updated;
    }
    let targets: Vec<&[f64]> = stats
        .iter()
        .map(|s| s.responsibilities.as_slice())
        .collect();
    next.gating = update_gating(&params.gating, stays, &targets, config.gating_steps);
    next
}

// ------------------------------------------------------------ step control

fn blend_model(old: &TrajectoryModel, new: &TrajectoryModel, frac: f64) -> TrajectoryModel {
    let lerp = |a: f64, b: f64| a + frac * (b - a);
    let epochs = old
        .epochs
        .iter()
        .zip(&new.epochs)
        .map(|(a, b)| {
            let ta = a.to_unconstrained();
            let tb = b.to_unconstrained();
            let t: Vec<f64> = ta.iter().zip(&tb).map(|(x, y)| lerp(*x, *y)).collect();
            EpochKernelParams::from_unconstrained(&t, a.streams(), a.rank)
        })
        .collect();
    let laws = old
        .durations
        .epochs
        .iter()
        .zip(&new.durations.epochs)
        .map(|(a, b)| {
            let (ca, cb) = (to_nb_coords(a), to_nb_coords(b));
            from_nb_coords(&[lerp(ca[0], cb[0]), lerp(ca[1], cb[1])])
        })
        .collect();
    let initial = old
        .initial
        .0
        .iter()
        .zip(&new.initial.0)
        .map(|(a, b)| lerp(*a, *b))
        .collect::<Vec<_>>();
    let norm: f64 = initial.iter().sum();
    TrajectoryModel {
        epochs,
        durations: crate::trajectory::DurationParams {
            t_max: old.durations.t_max,
            epochs: laws,
        },
        initial: InitialEpochDist(initial.into_iter().map(|p| p / norm).collect()),
    }
}

fn blend(old: &ModelParams, new: &ModelParams, frac: f64) -> ModelParams {
    let mut out = old.clone();
    for outcome in [Outcome::Discharged, Outcome::Icu] {
        *out.models_mut(outcome) = old
            .models(outcome)
            .iter()
            .zip(new.models(outcome))
            .map(|(a, b)| blend_model(a, b, frac))
            .collect();
    }
    for (ra, rb) in out.gating.weights.iter_mut().zip(&new.gating.weights) {
        for (a, b) in ra.iter_mut().zip(rb) {
            *a += frac * (b - *a);
        }
    }
    out
}

// ---------------------------------------------------------------- driver

fn check_training_set(train: &Cohort, g: usize, k: usize, config: &EmConfig) -> Result<()> {
    if g == 0 || k == 0 {
        return Err(Error::InvalidArgument("G and K must be at least 1".into()));
    }
    if config.t_max == 0 {
        return Err(Error::InvalidArgument("t_max must be at least 1".into()));
    }
    if train.is_empty() {
        return Err(Error::EmptyClass(0));
    }
    for outcome in [Outcome::Discharged, Outcome::Icu] {
        if train.count_outcome(outcome) == 0 {
            return Err(Error::EmptyClass(outcome.index() as u8));
        }
    }
    let reach = k * config.t_max;
    if let Some(p) = train
        .patients
        .iter()
        .find(|p| p.endpoint_time.ceil() as usize > reach)
    {
        return Err(Error::InvalidArgument(format!(
            "stay `{}` lasts {} h, beyond what {k} epochs of at most {} h can cover; raise t_max",
            p.id, p.endpoint_time, config.t_max
        )));
    }
    if let Some(p) = config.prior_icu {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("prior {p} outside (0, 1)")));
        }
    }
    Ok(())
}

/// Fits a `G`-phenotype, `K`-epoch model by generalized EM. Labels are
/// observed; phenotypes and epoch boundaries are latent. Each finished stay
/// is aligned so that its last epoch ends at the recorded endpoint.
pub fn em_fit(
    train: &Cohort,
    g: usize,
    k: usize,
    config: &EmConfig,
) -> Result<(ModelParams, FitReport)> {
    check_training_set(train, g, k, config)?;
    let d = train.streams();
    let standardizer = Standardizer::fit(train);
    let encoder = StaticEncoder::fit(train);
    let mut stays = Vec::with_capacity(train.len());
    for p in &train.patients {
        stays.push(Stay {
            obs: standardizer.apply_all(&p.events),
            endpoint: p.endpoint_time,
            outcome: p.outcome,
            features: encoder.encode(&p.profile)?,
        });
    }
    let ids: Vec<&str> = train.patients.iter().map(|p| p.id.as_str()).collect();
    let n_icu = train.count_outcome(Outcome::Icu);
    let prior_icu = config
        .prior_icu
        .unwrap_or(n_icu as f64 / train.len() as f64);

    let settings = InitSettings {
        epochs: k,
        streams: d,
        rank: config.rank,
        t_max: config.t_max,
        length_scale: config.init_length_scale,
        bounds: config.length_scale_bounds,
    };
    // Every clustering view gives a starting point; EM continues from the
    // one with the highest observed-data likelihood.
    let mut start: Option<(ModelParams, f64, Vec<PatientStats>)> = None;
    let candidates = initial_responsibilities(&stays, g, d, config.kmeans_restarts, config.seed);
    for (c, resp) in candidates.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_1417 ^ ((c as u64) << 32));
        let mut build = |outcome: Outcome| -> Vec<TrajectoryModel> {
            (0..g)
                .map(|z| {
                    let (members, weights): (Vec<&Stay>, Vec<f64>) = stays
                        .iter()
                        .zip(resp)
                        .filter(|(s, _)| s.outcome == outcome)
                        .map(|(s, r)| (s, r[z]))
                        .unzip();
                    initial_trajectory(&members, &weights, &settings, &mut rng)
                })
                .collect()
        };
        let stable = build(Outcome::Discharged);
        let deteriorating = build(Outcome::Icu);
        let targets: Vec<&[f64]> = resp.iter().map(Vec::as_slice).collect();
        let gating = update_gating(&GatingParams::zeros(g, encoder.len()), &stays, &targets, 10);
        let candidate = ModelParams {
            schema_version: MODEL_SCHEMA_VERSION,
            phenotypes: g,
            epochs: k,
            rank: config.rank,
            stable,
            deteriorating,
            gating,
            prior_icu,
            encoder: encoder.clone(),
            standardizer: standardizer.clone(),
            stream_catalog: train.stream_catalog.clone(),
            length_scale_bounds: config.length_scale_bounds,
            fit_report: None,
        };
        let (ll, stats) = match e_step(&stays, &ids, &candidate, config.min_segment_weight, 0) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) if c + 1 < candidates.len() || start.is_some() => continue,
            Err(e) => return Err(e),
        };
        log::debug!("EM start {c}: log likelihood {ll:.6}");
        if start.as_ref().is_none_or(|(_, best, _)| ll > *best) {
            start = Some((candidate, ll, stats));
        }
    }
    let (mut params, mut ll, mut stats) = start.expect("at least one starting point");
    let mut report = FitReport {
        trace: vec![ll],
        iterations: 0,
        converged: false,
        seed: config.seed,
        phenotypes: g,
        epochs: k,
        shortened_steps: 0,
    };
    for iteration in 1..=config.max_iter {
        let proposal = m_step(&params, &stays, &stats, config);
        let mut accepted = None;
        let mut frac = 1.0;
        for attempt in 0..5 {
            let candidate = if attempt == 0 {
                proposal.clone()
            } else {
                blend(&params, &proposal, frac)
            };
            match e_step(
                &stays,
                &ids,
                &candidate,
                config.min_segment_weight,
                iteration,
            ) {
                Ok((ll_new, stats_new)) if ll_new >= ll => {
                    accepted = Some((candidate, ll_new, stats_new));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => {}
                Err(e) => return Err(e),
            }
            if attempt == 0 {
                report.shortened_steps += 1;
            }
            frac *= 0.5;
        }
        report.iterations = iteration;
        let Some((next, ll_new, stats_new)) = accepted else {
            log::debug!("EM iteration {iteration}: no improving step, stopping");
            report.converged = true;
            break;
        };
        let gain = (ll_new - ll) / ll.abs().max(1e-300);
        log::debug!(
            "EM iteration {iteration}: log likelihood {ll_new:.6} (relative gain {gain:.3e})"
        );
        params = next;
        ll = ll_new;
        stats = stats_new;
        report.trace.push(ll);
        if gain < config.tol {
            report.converged = true;
            break;
        }
    }
    params.fit_report = Some(report.clone());
    Ok((params, report))
}

/// Posterior phenotype probabilities of finished stays under a trained
/// model, using their labels and full records.
pub fn phenotype_posteriors(params: &ModelParams, cohort: &Cohort) -> Result<Vec<Vec<f64>>> {
    let prepared = Prepared::new(params);
    let parts: Vec<Result<Vec<f64>>> = cohort
        .patients
        .par_iter()
        .map(|p| {
            let stay = Stay {
                obs: params.standardizer.apply_all(&p.events),
                endpoint: p.endpoint_time,
                outcome: p.outcome,
                features: params.encoder.encode(&p.profile)?,
            };
            e_step_patient(&stay, &p.id, params, &prepared, f64::INFINITY, 0)
                .map(|s| s.responsibilities)
        })
        .collect();
    parts.into_iter().collect()
}
