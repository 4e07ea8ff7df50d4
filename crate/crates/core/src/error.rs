use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum SmdError {
    #[error("query ({x}, {y}) is outside the domain [0, {max_x}] x [0, {max_y}]")]
    OutOfDomain { x: f64, y: f64, max_x: f64, max_y: f64 },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("pfm parse error at byte {offset}: {reason}")]
    Pfm { offset: u64, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("image error for {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SmdError {
    /// Short machine-parsable class name, used as the CLI error prefix.
    pub fn class(&self) -> &'static str {
        match self {
            SmdError::OutOfDomain { .. } => "domain",
            SmdError::Shape(_) => "shape",
            SmdError::Config(_) => "config",
            SmdError::Empty(_) => "empty",
            SmdError::Pfm { .. } => "pfm",
            SmdError::Checkpoint(_) => "checkpoint",
            SmdError::Image { .. } => "image",
            SmdError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, SmdError>;
