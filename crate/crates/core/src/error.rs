use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DtsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DtsError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite gradient for parameter {index}")]
    NanGradient { index: usize },

    #[error("non-finite loss or gradient at iteration {iter} in group {group}")]
    NanLoss { iter: usize, group: u8 },

    #[error("{}: format error at byte {offset}: {msg}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        msg: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DtsError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        DtsError::Dimension(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DtsError::Io {
            path: path.into(),
            source,
        }
    }
}
