use std::io;

use thiserror::Error;

/// Errors produced by the hashing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: u32, classes: usize },

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("config key `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("training aborted: {0}")]
    Diverged(Box<crate::trainer::DiagnosticSnapshot>),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
