use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analytics library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: empty input")]
    EmptyInput { path: String },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: duplicate student id `{id}`")]
    Duplicate {
        path: String,
        line: usize,
        id: String,
    },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("design matrix is empty: {0}")]
    EmptyDesign(String),

    #[error("underdetermined system: {rows} rows for {cols} columns")]
    Underdetermined { rows: usize, cols: usize },

    #[error("column `{column}` is linearly dependent on the preceding columns")]
    Collinear { column: String },

    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
