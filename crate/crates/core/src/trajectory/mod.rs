//! Non-stationary epoch process: patients start in a random epoch, advance
//! one epoch at a time with negative-binomial durations on an hourly grid,
//! and the observations inside each epoch follow that epoch's Gaussian
//! process. Boundary placements are marginalized exactly by a semi-Markov
//! forward-backward recursion over `(epoch, start hour)` states.

mod dp;
mod duration;
mod enumerate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{EpochKernelParams, LengthScaleBounds};

pub(crate) use dp::{posteriors_prepared, PreparedModel};
pub use dp::{
    segment_posteriors, terminal_log_likelihood, trajectory_log_likelihood, ForwardCache,
    SegmentPosterior, TrajectoryPosterior,
};
pub use duration::{
    duration_log_pmf, duration_log_survival, DurationParams, DurationTable, NegBinomial,
};
pub use enumerate::{enumerate_segmentations, segmentation_count, Segmentation};

/// Default cap on a single epoch's duration, hours.
pub const DEFAULT_T_MAX: usize = 168;

/// Multinomial law of the first observed epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InitialEpochDist(pub Vec<f64>);

impl InitialEpochDist {
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    /// All mass on one epoch.
    pub fn point(k: usize, epoch: usize) -> Self {
        let mut v = vec![0.0; k];
        v[epoch] = 1.0;
        Self(v)
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.0.iter().sum();
        if self.0.is_empty() || self.0.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "initial epoch distribution {:?} is not on the simplex",
                self.0
            )));
        }
        Ok(())
    }
}

/// One `(status, phenotype)` component: `K` epochs of kernel parameters plus
/// the duration and initial-epoch laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryModel {
    pub epochs: Vec<EpochKernelParams>,
    pub durations: DurationParams,
    pub initial: InitialEpochDist,
}

impl TrajectoryModel {
    pub fn num_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn streams(&self) -> usize {
        self.epochs.first().map_or(0, |e| e.streams())
    }

    pub fn t_max(&self) -> usize {
        self.durations.t_max
    }

    pub fn validate(&self, bounds: &LengthScaleBounds) -> Result<()> {
        let k = self.num_epochs();
        if k == 0 {
            return Err(Error::InvalidArgument(
                "a trajectory needs at least one epoch".into(),
            ));
        }
        let d = self.streams();
        for e in &self.epochs {
            if e.streams() != d {
                return Err(Error::InvalidArgument(
                    "epochs disagree on stream count".into(),
                ));
            }
            e.validate(bounds)?;
        }
        self.durations.validate(k)?;
        self.initial.validate()?;
        if self.initial.0.len() != k {
            return Err(Error::InvalidArgument(format!(
                "initial distribution has {} entries for {k} epochs",
                self.initial.0.len()
            )));
        }
        Ok(())
    }
}

/// How the observation window ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Scoring at time `t`: the current epoch is still running.
    Censored(f64),
    /// Training on a finished stay: the final epoch `K` ends at the endpoint.
    Terminal(f64),
}

impl Horizon {
    /// Number of hour cells `[c, c+1)` the window touches. A censored window
    /// `[0, t]` touches `floor(t) + 1` cells; a terminal window `[0, endpoint)`
    /// touches `ceil(endpoint)` cells (at least one).
    pub fn cells(&self) -> usize {
        match *self {
            Horizon::Censored(t) => t.max(0.0).floor() as usize + 1,
            Horizon::Terminal(end) => (end.max(0.0).ceil() as usize).max(1),
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, Horizon::Terminal(_))
    }
}

/// Hour cell of an observation, clamped into the window.
pub(crate) fn cell_of(time: f64, cells: usize) -> usize {
    (time.max(0.0).floor() as usize).min(cells - 1)
}
