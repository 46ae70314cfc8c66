use thiserror::Error;

/// Errors raised by model validation and the numerical layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("detuning out of range: {0} is outside [-1, 1]")]
    DetuningOutOfRange(f64),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("doublet index {k} out of range (bright rank {m})")]
    DoubletIndex { k: usize, m: usize },

    #[error("model has no dark states")]
    NoDarkStates,

    #[error("non-positive temperature {0}")]
    NonPositiveTemperature(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("not converged: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
