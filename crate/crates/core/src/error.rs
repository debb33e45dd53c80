use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced in block {block}")]
    NumericOverflow { block: usize },
    #[error("non-finite gradient in parameter group {0}")]
    NonFiniteGradient(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("certification failed after {attempts} attempts (best measured {best:.6e}, required {required:.6e})")]
    CertificationFailed {
        attempts: usize,
        best: f64,
        required: f64,
    },
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
