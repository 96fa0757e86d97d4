use thiserror::Error;

use crate::linalg::CMat;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid optimizer state: {0}")]
    State(String),

    #[error("problem infeasible: {0}")]
    Infeasible(String),

    #[error("conic solver failed: {0}")]
    Solver(String),

    /// SRCR step size collapsed before reaching a rank-one point. Carries the
    /// best accepted iterate so callers can still use it.
    #[error("SRCR stalled after {iterations} iterations (step size below {rho_floor:e})")]
    Stall {
        iterations: usize,
        rho_floor: f64,
        best: Box<CMat>,
        chi: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
