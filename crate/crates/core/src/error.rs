use thiserror::Error;

/// Errors raised by the solvers and their input validation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("{what} must be strictly positive (entry {index} = {value:e})")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("{what} must be nonnegative (entry {index} = {value:e})")]
    Negative {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("weights do not lie on the simplex: sum = {sum}")]
    NotOnSimplex { sum: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{solver} did not converge after {iterations} iterations (last violation {violation:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        violation: f64,
    },

    #[error("numerical range exceeded in {solver}: {detail}; try a larger epsilon or a smaller step")]
    NumericalRange {
        solver: &'static str,
        detail: String,
    },

    #[error("problem too large for {what}: {size} > {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },

    #[error("initialization is the trivial fixed point Q = a g^T, R = b g^T; re-seed the initialization")]
    TrivialFixedPoint,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(expected: impl Into<String>, got: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        expected: expected.into(),
        got: got.into(),
    }
}
