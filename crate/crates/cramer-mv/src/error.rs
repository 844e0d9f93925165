//! Crate-wide error type.
//!
//! Every failure is classified by the pipeline stage that produced it; the
//! classification drives the process exit code of the `cramer-mv` binary
//! (model = 2, solver = 3, frontier = 4, validation = 5, everything else = 1).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// The market/insurance model violates a structural assumption.
    #[error("model validation failed: {0}")]
    Model(String),

    /// The backward Riccati integration (or one of its inner minimizations)
    /// failed or produced values outside the certified bounds.
    #[error("solver failure: {0}")]
    Solver(String),

    /// A frontier target is infeasible or the target list is unusable.
    #[error("frontier failure: {0}")]
    Frontier(String),

    /// Monte Carlo output is statistically inconsistent with the analytic
    /// frontier.
    #[error("validation rejected: {0}")]
    Validation(String),

    /// Malformed run configuration or unusable argument combination.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code the binary reports for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Model(_) => 2,
            Error::Solver(_) => 3,
            Error::Frontier(_) => 4,
            Error::Validation(_) => 5,
            Error::Config(_) | Error::Io(_) | Error::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
