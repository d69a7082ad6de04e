//! Error type shared across the workbench.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TomoError {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An iterative solver or floating-point computation broke down.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// The normal derivative of the travel time vanishes at a receiver, so
    /// the adjoint boundary data is undefined there.
    #[error("degenerate boundary at receiver ({row}, {col}): |dT/dn| = {value:.3e}")]
    DegenerateBoundary { row: usize, col: usize, value: f64 },

    /// No admissible transition times exist for the requested ladder.
    #[error("schedule infeasible: {0}")]
    ScheduleInfeasible(String),

    /// Rejection sampling could not place a phantom within the retry budget.
    #[error("generation failure: {0}")]
    GenerationFailure(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, TomoError>;

impl TomoError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TomoError::InvalidArgument(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        TomoError::NumericalFailure(msg.into())
    }

    pub fn format(path: impl Into<String>, detail: impl Into<String>) -> Self {
        TomoError::Format {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
