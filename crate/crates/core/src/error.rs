use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in layer `{layer}`: expected {expected}, got {got}")]
    Shape {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("non-finite value in `{context}`: {detail}")]
    Numeric { context: String, detail: String },

    #[error("structural mismatch between `{producer}` and `{consumer}`: {detail}")]
    Structure {
        producer: String,
        consumer: String,
        detail: String,
    },

    #[error("invalid pruning plan: {0}")]
    Plan(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Errors raised while parsing dataset files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: bad magic number: expected {expected}, got {got}")]
    WrongMagic {
        path: PathBuf,
        expected: u32,
        got: u32,
    },

    #[error("{path}: truncated file: needed {needed} more byte(s) for {what}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        what: String,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: unexpected dimensions {rows}x{cols}, expected {expected}")]
    BadDimensions {
        path: PathBuf,
        rows: usize,
        cols: usize,
        expected: String,
    },

    #[error("{path}: file is {got} bytes, expected {expected}")]
    SizeMismatch {
        path: PathBuf,
        got: u64,
        expected: u64,
    },

    #[error("dataset directory not found: {path}")]
    NotFound { path: PathBuf },

    #[error("label {label} out of range for {classes} classes")]
    LabelRange { label: usize, classes: usize },
}
