use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Precondition violations and I/O failures.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no valid batches to combine")]
    NoValidBatches,

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Why an estimate could not be formed from the data at hand.
///
/// These are data conditions, not programming errors: a replication carries
/// on and reports the estimator as invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case")]
pub enum Invalid {
    #[error("an arm was never pulled")]
    EmptyArm,
    #[error("not enough observations for a residual variance")]
    InsufficientData,
    #[error("non-positive variance")]
    DegenerateVariance,
    #[error("propensity on the boundary of [0, 1]")]
    BoundaryPropensity,
    #[error("singular or ill-conditioned Gram matrix")]
    SingularGram,
}

impl Invalid {
    pub fn code(self) -> &'static str {
        match self {
            Invalid::EmptyArm => "empty_arm",
            Invalid::InsufficientData => "insufficient_data",
            Invalid::DegenerateVariance => "degenerate_variance",
            Invalid::BoundaryPropensity => "boundary_propensity",
            Invalid::SingularGram => "singular_gram",
        }
    }
}
