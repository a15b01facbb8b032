//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Error, Debug)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("unknown parameter `{0}`")]
    MissingParam(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("file format error: {0}")]
    Format(String),

    #[error("numeric abort: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) | CoreError::InvalidArg(_) | CoreError::Json(_) => 2,
            CoreError::Data(_) | CoreError::Format(_) | CoreError::Io(_) => 3,
            CoreError::Numeric(_) | CoreError::NonFinite(_) => 4,
            _ => 1,
        }
    }
}
