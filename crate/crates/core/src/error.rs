use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid simplex point: {0}")]
    InvalidSimplex(String),

    #[error("invalid counts: {0}")]
    InvalidCounts(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// `index` is 1-based: `theta_index < theta_(index+1)`.
    #[error("ordering violated at index {index}: theta_{index} < theta_{next}", next = .index + 1)]
    OrderingViolated { index: usize },

    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),

    #[error(
        "region has zero prior mass under the uniform prior; use the distance-based check instead"
    )]
    MeasureZeroRegion,

    #[error("importance sampling failed: every weight is zero under proposal {proposal}")]
    AllWeightsZero { proposal: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("enumeration of {size} lattice points exceeds the limit of {limit}")]
    EnumerationTooLarge { size: f64, limit: f64 },

    #[error("elicitation cannot reach the requested certainty: {0}")]
    Unreachable(String),

    #[error("prior violates assumption {0}")]
    AssumptionViolated(String),
}
