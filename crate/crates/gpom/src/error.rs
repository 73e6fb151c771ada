use thiserror::Error;

/// Errors produced by the mapping library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A symmetric matrix that must be positive definite was not, even after
    /// the one-shot jitter retry.
    #[error("ill-conditioned matrix: minimum pivot {min_pivot:e}")]
    IllConditioned { min_pivot: f64 },

    /// Every objective evaluation during hyperparameter search failed.
    #[error("hyperparameter optimization failed: all {evaluations} evaluations were ill-conditioned")]
    OptimizationFailed { evaluations: usize },

    /// Root bracketing for the inverse warp ran away; only possible when a
    /// warp violates its monotonicity invariants.
    #[error("no bracket for inverse warp at target {target} after {doublings} interval doublings")]
    NoBracket { target: f64, doublings: u32 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("pose ({x}, {y}) lies inside an obstacle")]
    InvalidPose { x: f64, y: f64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
