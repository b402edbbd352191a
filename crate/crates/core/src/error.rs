use thiserror::Error;

/// Errors produced by the numerical toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("operation not supported for this structure: {0}")]
    UnsupportedStructure(String),

    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("no section crossing within horizon {horizon}")]
    CrossingNotFound { horizon: f64 },

    #[error("singular Newton system (kernel dimension {kernel_dim})")]
    RankDeficient { kernel_dim: usize },

    #[error("iteration did not converge after {iterations} steps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("loop is not contractible (winding {winding:?})")]
    NotContractible { winding: Vec<i64> },

    #[error("stabilizing form is not positive along the orbit (min value {min_value:e})")]
    InvalidStabilization { min_value: f64 },

    #[error("ill-conditioned contact basis (condition number {condition:e})")]
    Conditioning { condition: f64 },

    #[error("invalid certificate: {0}")]
    InvalidCertificate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
