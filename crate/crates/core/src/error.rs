use thiserror::Error;

/// Errors raised by the library. Variants carry the module that produced them
/// so the CLI can surface precondition failures with their origin.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("hilbert-core: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("hilbert-core: negative time {0}")]
    NegativeTime(f64),

    #[error("{module}: invalid argument: {message}")]
    InvalidArgument {
        module: &'static str,
        message: String,
    },

    #[error("noise: jump at t={time} lies outside the grid [{t0}, {t_end}]")]
    JumpOutsideGrid { time: f64, t0: f64, t_end: f64 },

    #[error(
        "solver: resolvent step did not converge after {iterations} iterations \
         (residual {residual:e}, 1 - hM margin {margin})"
    )]
    ResolventNonConvergence {
        iterations: usize,
        residual: f64,
        margin: f64,
    },

    #[error("solver: step h={h} violates hM < 1 (M = {m})")]
    StepTooLarge { h: f64, m: f64 },

    #[error("solver: a-priori bound violated at t={time} (ratio {ratio:.4}); grid too coarse")]
    AprioriBoundViolated { time: f64, ratio: f64 },

    #[error("verification: {0}")]
    Verification(String),

    #[error("cli-io: {0}")]
    Config(String),

    #[error("cli-io: i/o failure: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            module,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
