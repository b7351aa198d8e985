use std::io;

use thiserror::Error;

use crate::tensor_file::TensorFileError;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Invalid(#[from] dpe_core::Error),
    #[error("invalid config: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Tensor(#[from] TensorFileError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 for usage and validation failures, 3 for malformed data files.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) | RunError::Invalid(_) | RunError::Config(_) => 2,
            RunError::Tensor(_) | RunError::Data(_) => 3,
            RunError::Io(_) => 1,
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
