use thiserror::Error;

/// Errors surfaced by the solvers and flow machinery.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("linear solve failed: residual {residual:.3e} exceeds {tol:.3e}")]
    LinearSolve { residual: f64, tol: f64 },

    #[error("value iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },

    #[error("policy has a zero entry at (s={state}, a={action}); log-density undefined for tau > 0")]
    ZeroPolicyEntry { state: usize, action: usize },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
