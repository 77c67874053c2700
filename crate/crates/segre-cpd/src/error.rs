//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Two containers that must share a shape do not.
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    /// A constructor or operation precondition was violated.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A geodesic step reached the cone apex (the weight dropped to the
    /// minimum admissible value). Recoverable: callers shrink the step.
    /// `t_critical` is the smallest positive arc length at which the
    /// weight first touches `min_weight`.
    #[error("geodesic weight reached the cone apex at t = {t_critical:.6e}")]
    ApexCrossed { t_critical: f64, min_weight: f64 },

    /// A line search exhausted its backtracking budget without finding an
    /// acceptable step.
    #[error("line search stalled after {max_backtracks} backtracks")]
    StepStalled { max_backtracks: usize },

    /// A text input could not be parsed. Lines are 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    pub fn shape_mismatch(expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
