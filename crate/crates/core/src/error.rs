use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("integration diverged at step {step} (t = {time} s)")]
    IntegrationFailure { step: usize, time: f64 },

    #[error("singular regression matrix; use a ridge > 0 ({0})")]
    Singular(String),

    #[error(
        "solver failed: {reason} (row residual {row_residual:e}, column residual {col_residual:e})"
    )]
    Solver {
        reason: String,
        row_residual: f64,
        col_residual: f64,
    },

    #[error("control problem infeasible; largest achievable margin is {max_margin}")]
    Infeasible { max_margin: f64 },

    #[error("no mixture with the requested component budget lies inside the ambiguity set")]
    EmptyAmbiguitySet,
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
