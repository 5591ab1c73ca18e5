use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("batch norm in train mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero-norm input vector (sample id {0})")]
    DegenerateInput(u64),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("unknown class {0} in task schedule")]
    UnknownClass(u32),
    #[error("memory buffer too small: have {have}, need {need}")]
    BufferTooSmall { have: usize, need: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}
