use thiserror::Error;

/// Errors reported by the library.
///
/// Configuration problems (bad subsets, out-of-range fields, mismatched
/// dimensions) are kept separate from numerical failures so callers can map
/// them to different exit paths.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("eigensolver failure: {0}")]
    Eigensolver(String),

    #[error("no intersection: {0}")]
    NoIntersection(String),

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("integrator accuracy: {0}")]
    IntegratorAccuracy(String),
}

pub type Result<T> = std::result::Result<T, Error>;
