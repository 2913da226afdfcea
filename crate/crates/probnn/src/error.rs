//! Crate-wide error type.

/// Errors produced by the library.
///
/// Configuration errors (`DimensionMismatch`, `InvalidParameter`) indicate
/// caller bugs; numerical errors indicate that a covariance could not be
/// factorized even after the jitter ladder was exhausted.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "jitter ladder exhausted at {max_jitter:e} in {context} (smallest eigenvalue {min_eigenvalue:e})"
    )]
    JitterExhausted {
        context: &'static str,
        max_jitter: f64,
        min_eigenvalue: f64,
    },

    #[error("calibration did not converge after {sweeps} sweeps (best mse {best_mse:e})")]
    CalibrationDiverged { sweeps: usize, best_mse: f64 },
}

impl Error {
    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
