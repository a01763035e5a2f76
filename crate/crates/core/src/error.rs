use thiserror::Error;

/// Errors raised by model evaluation, gradient computation and identification.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("rollout produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },

    #[error("non-finite value in {what}")]
    NonFiniteValue { what: &'static str },

    #[error("trajectory does not reproduce under the supplied parameters (step {step})")]
    TrajectoryMismatch { step: usize },

    #[error("inertia component {index} is not positive ({value})")]
    NonPositiveInertia { index: usize, value: f64 },

    #[error("penalty exponent {exponent} exceeds cap {cap}")]
    Overflow { exponent: f64, cap: f64 },

    #[error("invalid box: lower[{index}] = {lower} > upper[{index}] = {upper}")]
    InvalidBox {
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error("structurally zero Jacobian entry ({row}, {col}) has magnitude {value:e}")]
    MaskViolation { row: usize, col: usize, value: f64 },

    #[error("non-finite gradient passed to the optimizer")]
    NonFiniteGradient,

    #[error("rollout diverged {rejections} consecutive times at epoch {epoch}")]
    DivergedRollout { epoch: usize, rejections: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
