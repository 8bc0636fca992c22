use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = OpgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum OpgError {
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("training diverged at optimizer step {step}: non-finite loss or weights (ce={ce}, bce={bce})")]
    NonFinite { step: u64, ce: f64, bce: f64 },

    #[error("image decode error at {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl OpgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        OpgError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        OpgError::Validation(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        OpgError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Whether the failure is a user-input problem rather than a runtime one.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            OpgError::Validation(_) | OpgError::Domain(_) | OpgError::Shape { .. } | OpgError::Config { .. }
        )
    }
}

impl From<serde_json::Error> for OpgError {
    fn from(e: serde_json::Error) -> Self {
        OpgError::Serde(e.to_string())
    }
}
