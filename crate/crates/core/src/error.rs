use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every particle produced a non-finite importance weight during a write.
    #[error("all particles degenerate after write")]
    AllParticlesDegenerate,

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MemoryError>;

pub(crate) fn ensure_finite<'a, I>(values: I, what: &str) -> Result<()>
where
    I: IntoIterator<Item = &'a f64>,
{
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MemoryError::NonFinite(what.to_string()))
    }
}
