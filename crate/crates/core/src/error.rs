//! Error types shared across the library.

use thiserror::Error;

/// Library-wide error type.
///
/// `ContractViolation` covers broken runtime invariants and bad arguments to
/// numerical routines; `Config` covers malformed experiment descriptions.
/// The CLI maps these onto distinct exit codes.
#[derive(Debug, Error)]
pub enum FireError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("conjugate gradient diverged: residual grew over {grew_iters} consecutive iterations (iter {iter}, rel residual {rel_residual:.3e})")]
    CgDivergence {
        iter: usize,
        grew_iters: usize,
        rel_residual: f64,
    },

    #[error("schedule infeasible: {0}")]
    InfeasibleSchedule(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl FireError {
    /// Exit code the CLI should use for this error kind.
    pub fn exit_code(&self) -> u8 {
        match self {
            FireError::Config(_) | FireError::Serde(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, FireError>;

impl From<serde_json::Error> for FireError {
    fn from(e: serde_json::Error) -> Self {
        FireError::Serde(e.to_string())
    }
}

impl From<csv::Error> for FireError {
    fn from(e: csv::Error) -> Self {
        FireError::Serde(e.to_string())
    }
}
