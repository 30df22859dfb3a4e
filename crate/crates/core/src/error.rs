use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum DekiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("linear solve failed: {0}")]
    Solver(String),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("observation stream exhausted after {0} emissions")]
    StreamExhausted(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DekiError>;

pub(crate) fn ensure_finite<'a, I>(values: I, what: &'static str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DekiError::NonFinite(what))
    }
}
