use thiserror::Error;

/// Errors produced by model construction, inference and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid transition matrix: {0}")]
    InvalidTransition(String),

    #[error("invalid probability vector: {0}")]
    InvalidDistribution(String),

    #[error("invalid step density: {0}")]
    InvalidDensity(String),

    #[error("value {value} outside the p-value domain (0, 1]")]
    Domain { value: f64 },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("invalid p-value {value} at index {index}")]
    InvalidPValue { index: usize, value: f64 },

    #[error("stationary distribution is not unique: {0}")]
    NotErgodic(String),

    #[error("total emission probability is zero at feature {index}")]
    ZeroLikelihood { index: usize },

    #[error("degenerate component: {0}")]
    DegenerateWeights(String),

    #[error("non-finite log-likelihood at EM iteration {iteration}")]
    NonFiniteLikelihood { iteration: usize },

    #[error("need at least {min} features, got {m}")]
    TooFewFeatures { m: usize, min: usize },

    #[error("nominal level {0} must lie in (0, 1)")]
    InvalidLevel(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical procedures, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NotErgodic(_)
                | Error::ZeroLikelihood { .. }
                | Error::DegenerateWeights(_)
                | Error::NonFiniteLikelihood { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
