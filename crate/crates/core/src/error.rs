use thiserror::Error;

/// Errors produced by the dimension-reduction, design and sensitivity routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("empty sample set")]
    EmptySamples,

    #[error("{what} = {value} out of range (allowed 1..={max})")]
    RankOutOfRange {
        what: &'static str,
        value: usize,
        max: usize,
    },

    #[error("matrix is not symmetric positive definite ({context})")]
    NotPositiveDefinite { context: &'static str },

    #[error("columns are not orthonormal: ||W^T W - I||_F = {deviation:e}")]
    NotOrthonormal { deviation: f64 },

    #[error("model evaluation failed at sample {index}: {message}")]
    ModelEvaluation { index: usize, message: String },

    #[error("operation requires operator-mode or dense Jacobian access that is unavailable: {0}")]
    OperatorModeUnavailable(&'static str),

    #[error("singular interpolation system at EIM step {step}")]
    SingularInterpolation { step: usize },

    #[error("rank-deficient data: requested {requested}, effective rank {effective}")]
    RankDeficient { requested: usize, effective: usize },

    #[error("degenerate normalizer {value:e}: projected output has (numerically) zero variance")]
    ZeroNormalizer { value: f64 },

    #[error("prior must be standard normal; precondition the model first")]
    NotWhitened,

    #[error("prior covariance is not diagonal; coordinates are not independent factors")]
    CorrelatedPrior,

    #[error("singular matrix in {0}")]
    SingularMatrix(&'static str),

    #[error("CFL violation: max|u| * dt / dx = {cfl:.3} exceeds {limit} at step {step}")]
    CflViolation { cfl: f64, limit: f64, step: usize },

    #[error("eigensolver did not converge: {0}")]
    EigenSolver(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
