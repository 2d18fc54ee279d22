//! Exact Gaussian log marginal likelihood of the observations inside one
//! epoch segment, with its analytic gradient.

use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, MeasurementEvent};
use crate::error::{Error, Result};
use crate::kernel::{EpochKernelParams, PreparedKernel, NOISE_FLOOR};
use crate::linalg::{
    cholesky_in_place, cholesky_inverse, cholesky_log_det, solve_lower, solve_lower_transpose,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter tried, in order, when a covariance fails to factor.
pub const NUGGET_LADDER: [f64; 4] = [0.0, 1e-6, 1e-4, 1e-2];

/// One measurement in standardized units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub stream: usize,
    pub time: f64,
    pub value: f64,
}

/// Per-stream location and scale estimated on a training cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    pub fn identity(streams: usize) -> Self {
        Self {
            mean: vec![0.0; streams],
            sd: vec![1.0; streams],
        }
    }

    /// Pooled mean and standard deviation of every event of each stream.
    /// Streams with fewer than two events or zero spread keep unit scale.
    pub fn fit(cohort: &Cohort) -> Self {
        let d = cohort.streams();
        let mut sum = vec![0.0; d];
        let mut count = vec![0usize; d];
        for p in &cohort.patients {
            for e in &p.events {
                sum[e.stream] += e.value;
                count[e.stream] += 1;
            }
        }
        let mean: Vec<f64> = (0..d)
            .map(|s| {
                if count[s] > 0 {
                    sum[s] / count[s] as f64
                } else {
                    0.0
                }
            })
            .collect();
        let mut ss = vec![0.0; d];
        for p in &cohort.patients {
            for e in &p.events {
                let r = e.value - mean[e.stream];
                ss[e.stream] += r * r;
            }
        }
        let sd = (0..d)
            .map(|s| {
                if count[s] < 2 {
                    return 1.0;
                }
                let v = (ss[s] / (count[s] - 1) as f64).sqrt();
                if v > 0.0 && v.is_finite() {
                    v
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn apply(&self, event: &MeasurementEvent) -> Observation {
        Observation {
            stream: event.stream,
            time: event.time,
            value: (event.value - self.mean[event.stream]) / self.sd[event.stream],
        }
    }

    pub fn apply_all(&self, events: &[MeasurementEvent]) -> Vec<Observation> {
        events.iter().map(|e| self.apply(e)).collect()
    }

    pub fn invert(&self, stream: usize, standardized: f64) -> f64 {
        standardized * self.sd[stream] + self.mean[stream]
    }
}

/// Gradient in the unconstrained layout of [`EpochKernelParams::to_unconstrained`].
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGradient {
    pub mean: Vec<f64>,
    pub factor: Vec<f64>,
    pub diag: Vec<f64>,
    pub log_length_scale: f64,
    pub noise: Vec<f64>,
}

impl KernelGradient {
    pub fn zeros(streams: usize, rank: usize) -> Self {
        Self {
            mean: vec![0.0; streams],
            factor: vec![0.0; streams * rank],
            diag: vec![0.0; streams],
            log_length_scale: 0.0,
            noise: vec![0.0; streams],
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.mean.len() * 3 + self.factor.len() + 1);
        out.extend_from_slice(&self.mean);
        out.extend_from_slice(&self.factor);
        out.extend_from_slice(&self.diag);
        out.push(self.log_length_scale);
        out.extend_from_slice(&self.noise);
        out
    }
}

/// Log density of the segment under one epoch's Gaussian process.
///
/// An empty segment contributes `0.0`.
pub fn segment_log_marginal(obs: &[Observation], params: &EpochKernelParams) -> Result<f64> {
    if obs.is_empty() {
        return Ok(0.0);
    }
    let prepared = params.prepare();
    let mut ws = Workspace::default();
    ws.factor(obs, &prepared)?;
    Ok(ws.log_marginal(obs.len()))
}

/// Log marginal and its gradient in the unconstrained parameterization
/// (mean, factor, softplus diag, log length scale, softplus noise).
pub fn segment_log_marginal_grad(
    obs: &[Observation],
    params: &EpochKernelParams,
) -> Result<(f64, KernelGradient)> {
    let d = params.streams();
    let mut grad = KernelGradient::zeros(d, params.rank);
    if obs.is_empty() {
        return Ok((0.0, grad));
    }
    let prepared = params.prepare();
    let mut ws = Workspace::default();
    let mut raw = vec![0.0; EpochKernelParams::unconstrained_len(d, params.rank)];
    let value = ws.accumulate_grad(obs, params, &prepared, 1.0, &mut raw)?;
    let mut it = raw.into_iter();
    for v in grad.mean.iter_mut() {
        *v = it.next().unwrap();
    }
    for v in grad.factor.iter_mut() {
        *v = it.next().unwrap();
    }
    for v in grad.diag.iter_mut() {
        *v = it.next().unwrap();
    }
    grad.log_length_scale = it.next().unwrap();
    for v in grad.noise.iter_mut() {
        *v = it.next().unwrap();
    }
    Ok((value, grad))
}

/// Reusable buffers for dense segment evaluation.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    chol: Vec<f64>,
    time_kernel: Vec<f64>,
    alpha: Vec<f64>,
    inverse: Vec<f64>,
    m: Vec<f64>,
    nugget: f64,
}

impl Workspace {
    fn fill(&mut self, obs: &[Observation], k: &PreparedKernel, nugget: f64) {
        let n = obs.len();
        self.chol.clear();
        self.chol.resize(n * n, 0.0);
        self.time_kernel.clear();
        self.time_kernel.resize(n * n, 0.0);
        let d = k.streams;
        for a in 0..n {
            let oa = obs[a];
            for b in 0..a {
                let ob = obs[b];
                let dt = oa.time - ob.time;
                let kt = (-dt * dt * k.inv_two_l2).exp();
                self.time_kernel[a * n + b] = kt;
                self.time_kernel[b * n + a] = kt;
                let v = k.task_cov[oa.stream * d + ob.stream] * kt;
                self.chol[a * n + b] = v;
                self.chol[b * n + a] = v;
            }
            self.time_kernel[a * n + a] = 1.0;
            self.chol[a * n + a] = k.marginal_var(oa.stream) + nugget;
        }
    }

    /// Factor the covariance, escalating the nugget as needed, and solve for
    /// `alpha = K^-1 (x - m)`.
    pub(crate) fn factor(&mut self, obs: &[Observation], k: &PreparedKernel) -> Result<()> {
        let n = obs.len();
        let mut last_pivot = f64::NAN;
        for &nugget in &NUGGET_LADDER {
            self.fill(obs, k, nugget);
            match cholesky_in_place(&mut self.chol, n) {
                Ok(()) => {
                    self.nugget = nugget;
                    self.alpha.clear();
                    self.alpha
                        .extend(obs.iter().map(|o| o.value - k.mean[o.stream]));
                    solve_lower(&self.chol, n, &mut self.alpha);
                    return Ok(());
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

    /// Valid right after [`Self::factor`], while `alpha` still holds `L^-1 r`.
    pub(crate) fn log_marginal(&self, n: usize) -> f64 {
        let quad: f64 = self.alpha.iter().map(|z| z * z).sum();
        -0.5 * (quad + cholesky_log_det(&self.chol, n) + n as f64 * LN_2PI)
    }

    /// Generalized-least-squares statistics for the mean: adds
    /// `weight * A^T K^-1 A` into `info` (D x D) and `weight * A^T K^-1 x`
    /// into `rhs`, where `A` maps each observation to its stream and `K` is
    /// the covariance without the mean.
    pub(crate) fn accumulate_gls(
        &mut self,
        obs: &[Observation],
        k: &PreparedKernel,
        weight: f64,
        info: &mut [f64],
        rhs: &mut [f64],
    ) -> Result<()> {
        let n = obs.len();
        if n == 0 {
            return Ok(());
        }
        let d = k.streams;
        self.factor(obs, k)?;
        // alpha now holds L^-1 (x - m); shift back to L^-1 x using L^-1 A m.
        let mut present = vec![false; d];
        for o in obs {
            present[o.stream] = true;
        }
        let streams: Vec<usize> = (0..d).filter(|&u| present[u]).collect();
        self.m.clear();
        self.m.resize(streams.len() * n, 0.0);
        for (j, &u) in streams.iter().enumerate() {
            let col = &mut self.m[j * n..(j + 1) * n];
            for (c, o) in col.iter_mut().zip(obs) {
                *c = if o.stream == u { 1.0 } else { 0.0 };
            }
            solve_lower(&self.chol, n, col);
        }
        let mut zx = self.alpha.clone();
        for (j, &u) in streams.iter().enumerate() {
            let col = &self.m[j * n..(j + 1) * n];
            for (z, c) in zx.iter_mut().zip(col) {
                *z += c * k.mean[u];
            }
        }
        for (a, &u) in streams.iter().enumerate() {
            let ca = &self.m[a * n..(a + 1) * n];
            rhs[u] += weight * ca.iter().zip(&zx).map(|(p, q)| p * q).sum::<f64>();
            for (b, &w) in streams.iter().enumerate() {
                let cb = &self.m[b * n..(b + 1) * n];
                info[u * d + w] += weight * ca.iter().zip(cb).map(|(p, q)| p * q).sum::<f64>();
            }
        }
        Ok(())
    }

    /// Adds `weight * grad` into `grad_out` (unconstrained layout) and returns
    /// the unweighted log marginal.
    pub(crate) fn accumulate_grad(
        &mut self,
        obs: &[Observation],
        params: &EpochKernelParams,
        k: &PreparedKernel,
        weight: f64,
        grad_out: &mut [f64],
    ) -> Result<f64> {
        let n = obs.len();
        if n == 0 {
            return Ok(0.0);
        }
        let d = k.streams;
        let rank = params.rank;
        self.factor(obs, k)?;
        let value = self.log_marginal(n);
        solve_lower_transpose(&self.chol, n, &mut self.alpha);
        self.inverse.clear();
        self.inverse.resize(n * n, 0.0);
        cholesky_inverse(&self.chol, n, &mut self.inverse);

        // W = alpha alpha^T - K^-1, contracted against the structure of K.
        self.m.clear();
        self.m.resize(d * d, 0.0);
        let mut dlog_ls = 0.0;
        let mut dnoise = vec![0.0; d];
        let inv_l2 = 2.0 * k.inv_two_l2;
        for a in 0..n {
            let ua = obs[a].stream;
            let aa = self.alpha[a];
            for b in 0..n {
                let ub = obs[b].stream;
                let w = aa * self.alpha[b] - self.inverse[a * n + b];
                let kt = self.time_kernel[a * n + b];
                self.m[ua * d + ub] += 0.5 * w * kt;
                if a != b {
                    let dt = obs[a].time - obs[b].time;
                    dlog_ls += 0.5 * w * k.task_cov[ua * d + ub] * kt * dt * dt * inv_l2;
                }
            }
            let waa = aa * aa - self.inverse[a * n + a];
            dnoise[ua] += 0.5 * waa;
        }

        let mut off = 0;
        for a in 0..n {
            grad_out[off + obs[a].stream] += weight * self.alpha[a];
        }
        off += d;
        // d/dF = 2 M F
        for u in 0..d {
            for r in 0..rank {
                let mut s = 0.0;
                for w in 0..d {
                    s += self.m[u * d + w] * params.factor[w * rank + r];
                }
                grad_out[off + u * rank + r] += weight * 2.0 * s;
            }
        }
        off += d * rank;
        for u in 0..d {
            let chain = -(-params.diag[u]).exp_m1();
            grad_out[off + u] += weight * self.m[u * d + u] * chain;
        }
        off += d;
        grad_out[off] += weight * dlog_ls;
        off += 1;
        for u in 0..d {
            let chain = -(-(params.noise[u] - NOISE_FLOOR)).exp_m1();
            grad_out[off + u] += weight * dnoise[u] * chain;
        }
        Ok(value)
    }
}

/// Cholesky factor grown one observation at a time. Appending never changes
/// earlier rows, so the log marginal of every prefix is available in O(n^2)
/// per appended observation.
#[derive(Debug, Clone)]
pub(crate) struct IncrementalSegment {
    streams: Vec<usize>,
    times: Vec<f64>,
    rows: Vec<f64>,
    whitened: Vec<f64>,
    log_det: f64,
    quad: f64,
    scratch: Vec<f64>,
}

impl IncrementalSegment {
    pub fn new() -> Self {
        Self {
            streams: Vec::new(),
            times: Vec::new(),
            rows: Vec::new(),
            whitened: Vec::new(),
            log_det: 0.0,
            quad: 0.0,
            scratch: Vec::new(),
        }
    }

    pub fn clear(&mut self) {
        self.streams.clear();
        self.times.clear();
        self.rows.clear();
        self.whitened.clear();
        self.log_det = 0.0;
        self.quad = 0.0;
    }

    pub fn len(&self) -> usize {
        self.streams.len()
    }

    /// Appends one observation; `Err` when the new pivot is not positive, in
    /// which case the state is left unchanged.
    pub fn push(&mut self, o: &Observation, k: &PreparedKernel) -> std::result::Result<(), ()> {
        let n = self.len();
        self.scratch.clear();
        let mut norm = 0.0;
        for j in 0..n {
            let row = j * (j + 1) / 2;
            let mut s = k.cross(o.stream, o.time, self.streams[j], self.times[j]);
            for m in 0..j {
                s -= self.rows[row + m] * self.scratch[m];
            }
            let l = s / self.rows[row + j];
            norm += l * l;
            self.scratch.push(l);
        }
        let pivot = k.marginal_var(o.stream) - norm;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(());
        }
        let ljj = pivot.sqrt();
        let mut z = o.value - k.mean[o.stream];
        for j in 0..n {
            z -= self.scratch[j] * self.whitened[j];
        }
        z /= ljj;
        self.rows.extend_from_slice(&self.scratch);
        self.rows.push(ljj);
        self.whitened.push(z);
        self.streams.push(o.stream);
        self.times.push(o.time);
        self.log_det += 2.0 * ljj.ln();
        self.quad += z * z;
        Ok(())
    }

    pub fn log_marginal(&self) -> f64 {
        -0.5 * (self.quad + self.log_det + self.len() as f64 * LN_2PI)
    }
}
