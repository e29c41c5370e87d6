//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("discretization produced an empty {0} lattice (spacing too coarse for region)")]
    EmptyDiscretization(&'static str),

    #[error("no feasible path between ({0:.3}, {1:.3}) and ({2:.3}, {3:.3})")]
    NoFeasiblePath(f64, f64, f64, f64),

    #[error("target variance {got} outside valid range (0, {max})")]
    InvalidTarget { got: f64, max: f64 },

    #[error("coverage matrix digest does not match environment/kernel (expected {expected}, got {got})")]
    DigestMismatch { expected: String, got: String },

    #[error("Cholesky factorization failed after jitter escalation (final jitter {0:e})")]
    FactorizationFailure(f64),

    #[error("insufficient training data: need at least {need}, got {got}")]
    InsufficientData { need: usize, got: usize },

    #[error("hyperparameter fit diverged: every start failed factorization")]
    FitDiverged,

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
