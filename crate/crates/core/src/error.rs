use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("linear solver stalled after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDivergence { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("cannot evaluate expression `{expr}`: {reason}")]
    Expression { expr: String, reason: String },

    #[error("unknown target potential `{0}`")]
    UnknownTarget(String),

    #[error("reference potential has zero norm")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SolverDivergence { .. } | Error::NotPositiveDefinite { .. } | Error::ZeroNorm | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
