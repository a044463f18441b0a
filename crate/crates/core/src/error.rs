//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by how a
//! caller should react: `Invalid` means the inputs can never work, `Infeasible`
//! means the requested constraints admit no solution, and the remaining
//! variants report runtime failures (iteration limits, rejection sampling
//! exhaustion, I/O).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (dimensions, ranges, schema).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The constraint set is empty; no amount of iteration will help.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An iterative routine hit its iteration cap before reaching tolerance.
    #[error("failed to converge: {0}")]
    NonConvergence(String),

    /// A matrix required to be positive semidefinite has a significantly
    /// negative eigenvalue.
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    /// Rejection sampling used up its draw budget without an acceptance.
    #[error(
        "rejection sampling exhausted {draws} draws without acceptance \
         (smallest distance seen {min_distance:e}); raise the threshold or the draw budget"
    )]
    DrawsExhausted { draws: u64, min_distance: f64 },

    /// An acceptance region is empty even under exhaustive enumeration.
    #[error(
        "acceptance region is empty (smallest distance over all assignments {min_distance:e}); \
         raise the threshold"
    )]
    EmptyAcceptance { min_distance: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Shorthand for [`Error::Invalid`] with a formatted message.
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
