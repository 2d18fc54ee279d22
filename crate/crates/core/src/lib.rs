//! Early warning of clinical deterioration from irregularly sampled vital
//! signs and lab results.
//!
//! Each hospital stay is modelled as a walk through a small number of
//! epochs. Within an epoch the measurement streams follow a multi-task
//! Gaussian process; epoch durations are negative binomial on an hourly grid.
//! A mixture over latent phenotypes, gated by static admission features, is
//! fitted separately for patients who were later transferred to intensive
//! care and for those discharged. The online risk score is the posterior
//! probability of the transfer class given everything observed so far.

pub mod cohort;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod likelihood;
mod linalg;
pub mod mixture;
pub mod scoring;
pub mod simulator;
pub mod trajectory;

pub use error::{Error, ErrorKind, Result};
pub use linalg::log_sum_exp;
