use alloc::string::String;

use crate::catalog::GroupId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("structural error: {0}")]
    Structure(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("non-finite value at {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("intensity undefined for group {0}: zero historical ratio")]
    UndefinedIntensity(GroupId),
    #[error("relative improvement undefined for a zero baseline")]
    ZeroBaseline,
}

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Config,
        }
    }
}
