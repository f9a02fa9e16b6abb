//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide error enum. Variants carry enough context to diagnose a
/// failure from the message alone (indices, names, residuals).
#[derive(Debug, Error)]
pub enum FracError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("fracture segment {index} is not axis-aligned or not on the fine grid: {detail}")]
    MisalignedFracture { index: usize, detail: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("linear solve failed in {context}: {detail}")]
    SolveFailure { context: String, detail: String },

    #[error(
        "constraint system is rank-deficient for basis of continuum {continuum} \
         in oversampled region of block {block}: {detail}"
    )]
    RankDeficientConstraints {
        block: usize,
        continuum: usize,
        detail: String,
    },

    #[error("constraint residual {residual:.3e} exceeds tolerance {tol:.3e} for basis of continuum {continuum} in region of block {block}")]
    ConstraintResidual {
        block: usize,
        continuum: usize,
        residual: f64,
        tol: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value encountered in {context} (step {step})")]
    NonFinite { context: String, step: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    MalformedFile { path: String, detail: String },

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, FracError>;

impl FracError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        FracError::Io {
            path: path.into(),
            source,
        }
    }
}
