use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("depth cap reached: level {requested} requested, cap is {cap}")]
pub struct DepthCap {
    pub requested: u32,
    pub cap: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("domain error: {0}")]
pub struct DomainError(pub String);

impl DomainError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

/// Crate-level error, mapped one-to-one onto CLI exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Depth(#[from] DepthCap),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_exponent(name: &str, v: f64) -> std::result::Result<(), DomainError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(DomainError::new(format!("{name} must lie in (0,1), got {v}")))
    }
}
