//! Multi-task covariance: a task covariance matrix times a squared-exponential
//! time kernel, block diagonal across epochs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{softplus, softplus_inverse};

/// Smallest admissible per-stream observation noise.
pub const NOISE_FLOOR: f64 = 1e-6;

/// Admissible range of the time length scale, in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthScaleBounds {
    pub min: f64,
    pub max: f64,
}

impl Default for LengthScaleBounds {
    fn default() -> Self {
        Self {
            min: 0.25,
            max: 500.0,
        }
    }
}

impl LengthScaleBounds {
    pub fn clamp(&self, length_scale: f64) -> f64 {
        length_scale.clamp(self.min, self.max)
    }
}

/// Hyper-parameters of one locally stationary epoch.
///
/// `factor` is a row-major `D x rank` matrix; the task covariance is
/// `factor * factor^T + diag(diag)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochKernelParams {
    pub mean: Vec<f64>,
    pub rank: usize,
    pub factor: Vec<f64>,
    pub diag: Vec<f64>,
    pub length_scale: f64,
    pub noise: Vec<f64>,
}

impl EpochKernelParams {
    /// Independent unit-variance streams with the given length scale.
    pub fn isotropic(streams: usize, rank: usize, length_scale: f64, noise: f64) -> Self {
        Self {
            mean: vec![0.0; streams],
            rank,
            factor: vec![0.0; streams * rank],
            diag: vec![1.0; streams],
            length_scale,
            noise: vec![noise.max(NOISE_FLOOR); streams],
        }
    }

    pub fn streams(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self, bounds: &LengthScaleBounds) -> Result<()> {
        let d = self.streams();
        if self.factor.len() != d * self.rank || self.diag.len() != d || self.noise.len() != d {
            return Err(Error::InvalidArgument(format!(
                "epoch parameter shapes disagree with {d} streams and rank {}",
                self.rank
            )));
        }
        if self.rank > d {
            return Err(Error::InvalidArgument(format!(
                "task covariance rank {} exceeds stream count {d}",
                self.rank
            )));
        }
        let finite = self
            .mean
            .iter()
            .chain(&self.factor)
            .chain(&self.diag)
            .chain(&self.noise)
            .all(|v| v.is_finite());
        if !finite || !self.length_scale.is_finite() {
            return Err(Error::InvalidArgument("non-finite kernel parameter".into()));
        }
        if self.diag.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("negative task variance".into()));
        }
        if self.noise.iter().any(|&v| v < NOISE_FLOOR) {
            return Err(Error::InvalidArgument(format!(
                "observation noise below the {NOISE_FLOOR:e} floor"
            )));
        }
        if self.length_scale < bounds.min || self.length_scale > bounds.max {
            return Err(Error::InvalidArgument(format!(
                "length scale {} outside [{}, {}]",
                self.length_scale, bounds.min, bounds.max
            )));
        }
        Ok(())
    }

    pub fn task_cov(&self) -> Vec<f64> {
        task_cov_from_factors(&self.factor, self.rank, &self.diag)
    }

    /// Variance of a single observation of stream `u`, noise included.
    pub fn marginal_var(&self, u: usize) -> f64 {
        let r = self.rank;
        let f = &self.factor[u * r..(u + 1) * r];
        f.iter().map(|x| x * x).sum::<f64>() + self.diag[u] + self.noise[u]
    }

    /// Number of entries in the unconstrained parameter vector.
    pub fn unconstrained_len(streams: usize, rank: usize) -> usize {
        streams + streams * rank + streams + 1 + streams
    }

    /// Layout: `[mean, factor, softplus^-1(diag), log length_scale, softplus^-1(noise - floor)]`.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::unconstrained_len(self.streams(), self.rank));
        out.extend_from_slice(&self.mean);
        out.extend_from_slice(&self.factor);
        out.extend(self.diag.iter().map(|&d| softplus_inverse(d.max(1e-12))));
        out.push(self.length_scale.ln());
        out.extend(
            self.noise
                .iter()
                .map(|&s| softplus_inverse((s - NOISE_FLOOR).max(1e-12))),
        );
        out
    }

    pub fn from_unconstrained(theta: &[f64], streams: usize, rank: usize) -> Self {
        let d = streams;
        assert_eq!(theta.len(), Self::unconstrained_len(d, rank));
        let (mean, rest) = theta.split_at(d);
        let (factor, rest) = rest.split_at(d * rank);
        let (diag_raw, rest) = rest.split_at(d);
        let (log_ls, noise_raw) = rest.split_at(1);
        Self {
            mean: mean.to_vec(),
            rank,
            factor: factor.to_vec(),
            diag: diag_raw.iter().map(|&r| softplus(r)).collect(),
            length_scale: log_ls[0].exp(),
            noise: noise_raw
                .iter()
                .map(|&r| softplus(r) + NOISE_FLOOR)
                .collect(),
        }
    }

    pub(crate) fn prepare(&self) -> PreparedKernel {
        PreparedKernel {
            streams: self.streams(),
            mean: self.mean.clone(),
            task_cov: self.task_cov(),
            noise: self.noise.clone(),
            inv_two_l2: 1.0 / (2.0 * self.length_scale * self.length_scale),
        }
    }
}

/// Epoch parameters with the task covariance materialized.
#[derive(Debug, Clone)]
pub(crate) struct PreparedKernel {
    pub streams: usize,
    pub mean: Vec<f64>,
    pub task_cov: Vec<f64>,
    pub noise: Vec<f64>,
    pub inv_two_l2: f64,
}

impl PreparedKernel {
    #[inline]
    pub fn cross(&self, u: usize, t: f64, w: usize, t_prime: f64) -> f64 {
        let dt = t - t_prime;
        self.task_cov[u * self.streams + w] * (-dt * dt * self.inv_two_l2).exp()
    }

    #[inline]
    pub fn marginal_var(&self, u: usize) -> f64 {
        self.task_cov[u * self.streams + u] + self.noise[u]
    }
}

/// Squared-exponential time kernel `exp(-(t - t')^2 / (2 l^2))`.
pub fn se_kernel(t: f64, t_prime: f64, length_scale: f64) -> f64 {
    log_se_kernel(t, t_prime, length_scale).exp()
}

/// Log of [`se_kernel`]; stays finite where the kernel itself underflows.
pub fn log_se_kernel(t: f64, t_prime: f64, length_scale: f64) -> f64 {
    let dt = t - t_prime;
    -(dt * dt) / (2.0 * length_scale * length_scale)
}

/// `factor * factor^T + diag(diag)` as a row-major `D x D` matrix.
pub fn task_cov_from_factors(factor: &[f64], rank: usize, diag: &[f64]) -> Vec<f64> {
    let d = diag.len();
    debug_assert_eq!(factor.len(), d * rank);
    let mut out = vec![0.0; d * d];
    for u in 0..d {
        for w in 0..=u {
            let mut s = 0.0;
            for r in 0..rank {
                s += factor[u * rank + r] * factor[w * rank + r];
            }
            out[u * d + w] = s;
            out[w * d + u] = s;
        }
        out[u * d + u] += diag[u];
    }
    out
}

/// Full `n x n` covariance of observations `(stream, time)` where `epochs[a]`
/// labels the epoch of observation `a` and indexes `params`.
///
/// Entries across different epochs are exactly zero; each diagonal entry
/// carries the observation noise of its stream.
pub fn assemble_covariance(
    obs: &[(usize, f64)],
    epochs: &[usize],
    params: &[Option<EpochKernelParams>],
) -> Result<Vec<f64>> {
    if obs.len() != epochs.len() {
        return Err(Error::InvalidArgument(
            "one epoch label is required per observation".into(),
        ));
    }
    let mut prepared: Vec<Option<PreparedKernel>> = vec![None; params.len()];
    for &k in epochs {
        let p = params
            .get(k)
            .and_then(|p| p.as_ref())
            .ok_or(Error::MissingEpoch(k))?;
        if prepared[k].is_none() {
            prepared[k] = Some(p.prepare());
        }
    }
    let n = obs.len();
    let mut out = vec![0.0; n * n];
    for a in 0..n {
        let ka = epochs[a];
        let p = prepared[ka].as_ref().expect("prepared above");
        let (ua, ta) = obs[a];
        if ua >= p.streams {
            return Err(Error::InvalidArgument(format!("stream {ua} out of range")));
        }
        for b in 0..a {
            if epochs[b] != ka {
                continue;
            }
            let (ub, tb) = obs[b];
            let v = p.cross(ua, ta, ub, tb);
            out[a * n + b] = v;
            out[b * n + a] = v;
        }
        out[a * n + a] = p.marginal_var(ua);
    }
    Ok(out)
}
