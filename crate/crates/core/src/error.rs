use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("patient `{patient}` violates `{rule}`")]
    Invariant { patient: String, rule: String },
    #[error("unknown value `{value}` for categorical field `{field}`")]
    UnknownCategory { field: String, value: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing kernel parameters for epoch {0}")]
    MissingEpoch(usize),
    #[error("duration {duration} outside support [1, {max}]")]
    DurationOutOfSupport { duration: usize, max: usize },
    #[error("horizon of {cells} hour cells exceeds {epochs} epochs x {max_duration} h")]
    HorizonTooLong {
        cells: usize,
        epochs: usize,
        max_duration: usize,
    },
    #[error("segmentation count {count} exceeds the enumeration guard {limit}")]
    EnumerationTooLarge { count: u128, limit: u128 },
    #[error("covariance of size {size} not positive definite after nugget {nugget:e} (min pivot {min_pivot:e})")]
    NotPositiveDefinite {
        size: usize,
        nugget: f64,
        min_pivot: f64,
    },
    #[error("non-finite likelihood: {0}")]
    NonFinite(String),
    #[error("event at t={time} precedes the last buffered event at t={last}")]
    OutOfOrder { time: f64, last: f64 },
    #[error("training cohort has no patients with outcome {0}")]
    EmptyClass(u8),
    #[error("target TPR {target} unreachable (max achievable {best})")]
    UnreachableTpr { target: f64, best: f64 },
    #[error("model file: {0}")]
    Model(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) | Error::EnumerationTooLarge { .. } => ErrorKind::Config,
            Error::NotPositiveDefinite { .. }
            | Error::NonFinite(_)
            | Error::HorizonTooLong { .. }
            | Error::UnreachableTpr { .. } => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
