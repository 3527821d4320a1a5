use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("every eigenvalue of the Gram matrix is below the rank cutoff")]
    ZeroMatrix,

    #[error("linear system is singular")]
    Singular,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("numerical blowup: {0}")]
    NumericalBlowup(String),

    #[error("exact optimum is not available for this model")]
    UnsupportedModel,

    #[error("invalid regime: {0}")]
    InvalidRegime(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),

    #[error("empty batch")]
    EmptyBatch,

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected,
            got,
            context,
        })
    }
}
