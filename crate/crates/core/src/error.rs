use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("operators do not form a commuting family")]
    NonCommuting,

    #[error("inconsistent kernel: {0}")]
    InconsistentKernel(String),

    #[error(
        "kernel pair is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e} below {threshold:.3e}"
    )]
    NotPositiveSemidefinite { min_eigenvalue: f64, threshold: f64 },

    #[error("augmented covariance size {size} exceeds the colored-noise cap {cap}")]
    GridTooLarge { size: usize, cap: usize },

    #[error("drift mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("non-finite amplitude at step {step}")]
    NonFiniteState { step: usize },

    #[error("sum of trajectory weights {total:.3e} is below the floor")]
    DegenerateWeights { total: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("unsupported functional: {0}")]
    UnsupportedFunctional(String),

    #[error("unsupported kernel: {0}")]
    UnsupportedKernel(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o: {0}")]
    Io(String),

    #[error("trajectory {index}: {source}")]
    Trajectory { index: u64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;
