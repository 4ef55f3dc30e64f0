use thiserror::Error;

/// Errors raised by the solvers, operators and file readers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix data length mismatch: expected {expected}, got {got}")]
    InvalidData { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid factor pair: {0}")]
    InvalidFactor(String),

    #[error("invalid observations: {0}")]
    InvalidObservations(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operator cannot be reduced to entry sampling")]
    UnsupportedOperator,

    #[error("gradient undefined at a zero residual")]
    GradientUndefined,

    #[error("weighted projection failed to converge after {iterations} iterations")]
    ProjectionFailure { iterations: usize },

    #[error("non-finite objective after {iterations} iterations")]
    Divergence { iterations: usize },

    #[error("power iteration did not converge; best estimate {estimate}")]
    DerivativeUncertain { estimate: f64 },

    #[error("subspace basis is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate index ({row}, {col}) at line {line}")]
    DuplicateIndex { row: usize, col: usize, line: usize },

    #[error("bad matrix file: {0}")]
    BadFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
