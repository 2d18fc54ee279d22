use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::linalg::{log_add_exp, log_sum_exp};

/// Negative binomial on `{1, 2, ...}`: `T = 1 + X` where `X` counts failures
/// before the `r`-th success with success probability `p`. With `r = 1` this
/// is the geometric law `p (1 - p)^(T - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegBinomial {
    pub r: f64,
    pub p: f64,
}

impl NegBinomial {
    pub fn new(r: f64, p: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) || !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "negative binomial needs r > 0 and p in (0, 1), got r={r}, p={p}"
            )));
        }
        Ok(Self { r, p })
    }

    /// Untruncated mean `1 + r (1 - p) / p`.
    pub fn mean(&self) -> f64 {
        1.0 + self.r * (1.0 - self.p) / self.p
    }

    /// Shape with the requested untruncated mean and dispersion `r`.
    pub fn with_mean(mean: f64, r: f64) -> Self {
        let excess = (mean - 1.0).max(1e-3);
        let p = (r / (r + excess)).clamp(1e-9, 1.0 - 1e-9);
        Self { r, p }
    }

    fn log_pmf_untruncated(&self, t: usize) -> f64 {
        let x = (t - 1) as f64;
        ln_gamma(x + self.r) - ln_gamma(self.r) - ln_gamma(x + 1.0)
            + self.r * self.p.ln()
            + x * (1.0 - self.p).ln()
    }
}

/// Per-epoch duration laws on the truncated support `{1, ..., t_max}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationParams {
    pub t_max: usize,
    pub epochs: Vec<NegBinomial>,
}

/// Log pmf and log upper tail, indexed by duration (`index 0` unused).
#[derive(Debug, Clone, PartialEq)]
pub struct DurationTable {
    pub log_pmf: Vec<f64>,
    pub log_survival: Vec<f64>,
}

impl DurationTable {
    pub fn new(law: &NegBinomial, t_max: usize) -> Self {
        let mut log_pmf = vec![f64::NEG_INFINITY; t_max + 1];
        for (t, v) in log_pmf.iter_mut().enumerate().skip(1) {
            *v = law.log_pmf_untruncated(t);
        }
        let log_norm = log_sum_exp(&log_pmf[1..]);
        for v in log_pmf.iter_mut().skip(1) {
            *v -= log_norm;
        }
        let mut log_survival = vec![f64::NEG_INFINITY; t_max + 2];
        for t in (1..=t_max).rev() {
            log_survival[t] = log_add_exp(log_survival[t + 1], log_pmf[t]);
        }
        log_survival.truncate(t_max + 1);
        // P(T >= 1) is one by construction; pin it against rounding.
        if t_max >= 1 {
            log_survival[1] = 0.0;
        }
        Self {
            log_pmf,
            log_survival,
        }
    }

    pub fn t_max(&self) -> usize {
        self.log_pmf.len() - 1
    }

    /// Mean of the truncated law.
    pub fn mean(&self) -> f64 {
        self.log_pmf
            .iter()
            .enumerate()
            .skip(1)
            .map(|(t, lp)| t as f64 * lp.exp())
            .sum()
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for t in 1..=self.t_max() {
            acc += self.log_pmf[t].exp();
            if u < acc {
                return t;
            }
        }
        self.t_max()
    }
}

impl DurationParams {
    pub fn validate(&self, epochs: usize) -> Result<()> {
        if self.t_max == 0 {
            return Err(Error::InvalidArgument("t_max must be at least 1".into()));
        }
        if self.epochs.len() != epochs {
            return Err(Error::InvalidArgument(format!(
                "{} duration laws for {epochs} epochs",
                self.epochs.len()
            )));
        }
        for law in &self.epochs {
            NegBinomial::new(law.r, law.p)?;
        }
        Ok(())
    }

    pub fn tables(&self) -> Vec<DurationTable> {
        self.epochs
            .iter()
            .map(|law| DurationTable::new(law, self.t_max))
            .collect()
    }

    fn check(&self, duration: usize, epoch: usize) -> Result<&NegBinomial> {
        if duration == 0 || duration > self.t_max {
            return Err(Error::DurationOutOfSupport {
                duration,
                max: self.t_max,
            });
        }
        self.epochs
            .get(epoch)
            .ok_or_else(|| Error::InvalidArgument(format!("no duration law for epoch {epoch}")))
    }
}

/// Log probability that epoch `epoch` lasts exactly `duration` hours.
pub fn duration_log_pmf(duration: usize, epoch: usize, params: &DurationParams) -> Result<f64> {
    let law = params.check(duration, epoch)?;
    Ok(DurationTable::new(law, params.t_max).log_pmf[duration])
}

/// Log probability that epoch `epoch` lasts at least `elapsed` hours.
pub fn duration_log_survival(elapsed: usize, epoch: usize, params: &DurationParams) -> Result<f64> {
    let law = params.check(elapsed, epoch)?;
    Ok(DurationTable::new(law, params.t_max).log_survival[elapsed])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn params(r: f64, p: f64, t_max: usize) -> DurationParams {
        DurationParams {
            t_max,
            epochs: vec![NegBinomial::new(r, p).unwrap()],
        }
    }

    #[test]
    fn pmf_normalizes() {
        for &(r, p, t_max) in &[(5.0, 0.5, 500), (0.3, 0.02, 168), (40.0, 0.9, 12)] {
            let d = params(r, p, t_max);
            let total: f64 = (1..=t_max)
                .map(|t| duration_log_pmf(t, 0, &d).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-12, "r={r} p={p}: {total}");
        }
    }

    #[test]
    fn r_one_is_truncated_geometric() {
        let d = params(1.0, 0.2, 30);
        let z: f64 = (1..=30).map(|t| 0.2 * 0.8f64.powi(t - 1)).sum();
        for t in 1..=30usize {
            let expect = (0.2 * 0.8f64.powi(t as i32 - 1) / z).ln();
            assert!((duration_log_pmf(t, 0, &d).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn survival_edges_and_tail_sum() {
        let d = params(3.0, 0.3, 40);
        assert_eq!(duration_log_survival(1, 0, &d).unwrap(), 0.0);
        let last = duration_log_survival(40, 0, &d).unwrap();
        assert!((last - duration_log_pmf(40, 0, &d).unwrap()).abs() < 1e-12);
        for from in [2usize, 7, 19, 33] {
            let brute: f64 = (from..=40)
                .map(|t| duration_log_pmf(t, 0, &d).unwrap().exp())
                .sum();
            assert!((duration_log_survival(from, 0, &d).unwrap() - brute.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_support_is_an_error() {
        let d = params(3.0, 0.3, 40);
        assert!(duration_log_pmf(0, 0, &d).is_err());
        assert!(duration_log_pmf(41, 0, &d).is_err());
        assert!(duration_log_survival(41, 0, &d).is_err());
    }

    #[test]
    fn monte_carlo_mean_matches_truncated_mean() {
        let table = DurationTable::new(&NegBinomial::new(5.0, 0.5).unwrap(), 500);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mean = (0..n).map(|_| table.sample(&mut rng) as f64).sum::<f64>() / n as f64;
        let direct = table.mean();
        assert!((direct - 6.0).abs() < 1e-9);
        assert!((mean - direct).abs() / direct < 0.01);
    }
}
