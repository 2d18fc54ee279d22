//! Independent reference implementations used as test oracles. None of
//! these call into the library's numerics: densities come from nalgebra and
//! statrs, and segmentations are enumerated by plain recursion.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Discrete, NegativeBinomial as StatrsNb};

use wardrisk::kernel::EpochKernelParams;
use wardrisk::likelihood::Observation;
use wardrisk::trajectory::{DurationParams, InitialEpochDist, NegBinomial, TrajectoryModel};

/// Task covariance `F F^T + diag` written out entry by entry.
pub fn task_cov(p: &EpochKernelParams) -> DMatrix<f64> {
    let d = p.mean.len();
    let f = DMatrix::from_row_slice(d, p.rank, &p.factor);
    &f * f.transpose() + DMatrix::from_diagonal(&DVector::from_vec(p.diag.clone()))
}

/// Log density of a segment under the epoch GP, by building the dense
/// covariance and factoring it with nalgebra.
pub fn dense_mvn_log_density(obs: &[Observation], p: &EpochKernelParams) -> f64 {
    let n = obs.len();
    if n == 0 {
        return 0.0;
    }
    let b = task_cov(p);
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let dt = obs[i].time - obs[j].time;
        let k = b[(obs[i].stream, obs[j].stream)]
            * (-dt * dt / (2.0 * p.length_scale * p.length_scale)).exp();
        if i == j {
            k + p.noise[obs[i].stream]
        } else {
            k
        }
    });
    let resid = DVector::from_fn(n, |i, _| obs[i].value - p.mean[obs[i].stream]);
    let chol = cov
        .cholesky()
        .expect("oracle covariance must be positive definite");
    let alpha = chol.solve(&resid);
    let log_det: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    -0.5 * (resid.dot(&alpha) + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// `log P(T = t)` for `t = 0..=t_max` of `T = 1 + X`, `X ~ NB(r, p)`,
/// truncated to `1..=t_max`; index 0 is `-inf`.
pub fn duration_log_pmf(law: &NegBinomial, t_max: usize) -> Vec<f64> {
    let nb = StatrsNb::new(law.r, law.p).unwrap();
    let raw: Vec<f64> = (1..=t_max).map(|t| nb.pmf((t - 1) as u64)).collect();
    let z: f64 = raw.iter().sum();
    std::iter::once(f64::NEG_INFINITY)
        .chain(raw.iter().map(|v| (v / z).ln()))
        .collect()
}

/// `log P(T >= t)` for `t = 0..=t_max`.
pub fn duration_log_survival(law: &NegBinomial, t_max: usize) -> Vec<f64> {
    let pmf: Vec<f64> = duration_log_pmf(law, t_max)
        .iter()
        .map(|v| v.exp())
        .collect();
    (0..=t_max)
        .map(|t| pmf[t.max(1)..].iter().sum::<f64>().min(1.0).ln())
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// One full assignment: starting epoch and the cells where later epochs
/// begin.
#[derive(Debug, Clone)]
pub struct Path {
    pub start_epoch: usize,
    pub boundaries: Vec<usize>,
}

/// All ways to start in some epoch and advance at most `k - 1 - start`
/// times on the cell grid `1..cells`. With `terminal`, the walk must end in
/// the last epoch.
pub fn all_paths(k: usize, cells: usize, terminal: bool) -> Vec<Path> {
    fn rec(
        from: usize,
        cells: usize,
        left: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
        exact: bool,
    ) {
        if !exact || left == 0 {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for b in from..cells {
            cur.push(b);
            rec(b + 1, cells, left - 1, cur, out, exact);
            cur.pop();
        }
    }
    let mut paths = Vec::new();
    for start in 0..k {
        let mut sets = Vec::new();
        rec(
            1,
            cells,
            k - 1 - start,
            &mut Vec::new(),
            &mut sets,
            terminal,
        );
        for b in sets {
            paths.push(Path {
                start_epoch: start,
                boundaries: b,
            });
        }
    }
    paths
}

/// Hour cell of a time within a window of `cells` cells.
pub fn cell(time: f64, cells: usize) -> usize {
    (time.floor().max(0.0) as usize).min(cells - 1)
}

/// Log joint of the observations and one path.
pub fn path_log_joint(
    obs: &[Observation],
    cells: usize,
    terminal: bool,
    model: &TrajectoryModel,
    path: &Path,
) -> f64 {
    let k_count = model.epochs.len();
    let t_max = model.durations.t_max;
    let mut total = model.initial.0[path.start_epoch].ln();
    let mut edges = vec![0];
    edges.extend(&path.boundaries);
    edges.push(cells);
    for (i, w) in edges.windows(2).enumerate() {
        let epoch = path.start_epoch + i;
        let len = w[1] - w[0];
        if len > t_max {
            return f64::NEG_INFINITY;
        }
        let law = &model.durations.epochs[epoch];
        let last = i + 2 == edges.len();
        total += if !last {
            duration_log_pmf(law, t_max)[len]
        } else if terminal {
            if epoch + 1 != k_count {
                return f64::NEG_INFINITY;
            }
            duration_log_pmf(law, t_max)[len]
        } else {
            duration_log_survival(law, t_max)[len]
        };
        let seg: Vec<Observation> = obs
            .iter()
            .filter(|o| (w[0]..w[1]).contains(&cell(o.time, cells)))
            .copied()
            .collect();
        total += dense_mvn_log_density(&seg, &model.epochs[epoch]);
    }
    total
}

/// Log likelihood by summing over every path.
pub fn brute_force_log_likelihood(
    obs: &[Observation],
    cells: usize,
    terminal: bool,
    model: &TrajectoryModel,
) -> f64 {
    let terms: Vec<f64> = all_paths(model.epochs.len(), cells, terminal)
        .iter()
        .map(|p| path_log_joint(obs, cells, terminal, model, p))
        .collect();
    log_sum_exp(&terms)
}

pub fn random_kernel(rng: &mut ChaCha8Rng, d: usize, rank: usize) -> EpochKernelParams {
    EpochKernelParams {
        mean: (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        rank,
        factor: (0..d * rank).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        diag: (0..d).map(|_| rng.gen_range(0.05..1.0)).collect(),
        length_scale: rng.gen_range(0.5..6.0),
        noise: (0..d).map(|_| rng.gen_range(0.01..0.5)).collect(),
    }
}

/// `n` time-sorted observations on `[0, horizon]`.
pub fn random_observations(
    rng: &mut ChaCha8Rng,
    d: usize,
    n: usize,
    horizon: f64,
) -> Vec<Observation> {
    let mut times: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..horizon)).collect();
    times.sort_by(f64::total_cmp);
    times
        .into_iter()
        .map(|time| Observation {
            stream: rng.gen_range(0..d),
            time,
            value: rng.gen_range(-3.0..3.0),
        })
        .collect()
}

pub fn random_trajectory_model(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
    t_max: usize,
) -> TrajectoryModel {
    let mut pi: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|p| *p /= s);
    TrajectoryModel {
        epochs: (0..k).map(|_| random_kernel(rng, d, 1)).collect(),
        durations: DurationParams {
            t_max,
            epochs: (0..k)
                .map(|_| {
                    NegBinomial::new(rng.gen_range(0.5..5.0), rng.gen_range(0.15..0.9)).unwrap()
                })
                .collect(),
        },
        initial: InitialEpochDist(pi),
    }
}

/// Relative error, measured against 1 when the reference is smaller than 1.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
