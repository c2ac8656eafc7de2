use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Input violates a structural invariant (negative mass, bad weights, shape mismatch).
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Input is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Constraint set is empty.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Objective is unbounded over the feasible set.
    #[error("unbounded: {0}")]
    Unbounded(String),

    /// Iterative method stopped before meeting its tolerance.
    #[error("not converged after {iterations} iterations: {detail}")]
    NotConverged { iterations: usize, detail: String },

    /// Training produced a non-finite value.
    #[error("diverged at iteration {iteration}: {detail}")]
    Diverged { iteration: usize, detail: String },

    /// Malformed input file or configuration.
    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
