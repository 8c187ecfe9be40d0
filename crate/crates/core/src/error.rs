use thiserror::Error;

/// Errors produced anywhere in the learning pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (bad index, invalid range, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A fixed-point solve failed to converge.
    #[error("LQRE iteration did not converge at lambda = {lambda}: residual {residual:.3e} after {iterations} iterations")]
    Convergence {
        lambda: f64,
        residual: f64,
        iterations: usize,
    },

    /// An enumeration exceeded the configured size cap.
    #[error("instance too large: {0}")]
    TooLarge(String),

    /// A WCSP had no assignment satisfying all hard constraints.
    #[error("no feasible assignment exists")]
    Unsatisfiable,

    /// An internal invariant failed (reported rather than panicking).
    #[error("internal error: {0}")]
    Internal(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
