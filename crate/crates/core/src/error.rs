use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix `{0}` is not symmetric within tolerance")]
    NotSymmetric(String),

    #[error("matrix `{0}` is not positive definite")]
    NotPositiveDefinite(String),

    #[error("non-finite entry in `{0}`")]
    NonFinite(String),

    #[error("invalid supply rate: {0}")]
    InvalidSupply(String),

    #[error("singular pivot: {0}")]
    SingularPivot(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("mode-combination budget exceeded: {count} combinations (cap {cap})")]
    CombinationBudget { count: usize, cap: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("gain recovery failed: {0}")]
    RecoveryFailure(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
