//! Error type shared by all modules.

use thiserror::Error;

/// Errors produced by model construction, grid algebra and table pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// A model or grid parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    /// Two grid functions with different steps were combined.
    #[error("grid step mismatch: {0} vs {1}")]
    GridStepMismatch(f64, f64),

    /// A query point lies outside the stored grid range.
    #[error("point {point} outside grid range [{lo}, {hi}]")]
    OutOfRange { point: f64, lo: f64, hi: f64 },

    /// A query point does not sit on a grid node.
    #[error("point {0} is not aligned to the grid (step {1})")]
    Misaligned(f64, f64),

    /// A moment required by a formula is infinite for the chosen family.
    #[error("required moment {0} is not finite for this family")]
    MissingMoment(&'static str),

    /// An operation is not implemented for the chosen family.
    #[error("unsupported for this family: {0}")]
    Unsupported(String),

    /// A limit estimate did not stabilise on the available grid.
    #[error("not converged: {0}")]
    NotConverged(String),

    /// Root bracketing failed while solving mu(z) = 1.
    #[error("bracket failure: {0}")]
    BracketFailure(String),

    /// A ratio against a nonpositive table value was requested.
    #[error("table value must be positive, got {0}")]
    NonPositiveValue(f64),

    /// A generation index outside the tabulated range was requested.
    #[error("generation {j} not tabulated (jmax = {jmax})")]
    MissingTable { j: u32, jmax: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
