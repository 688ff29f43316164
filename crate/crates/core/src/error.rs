//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates its documented range or structure.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// An input (data, dimensions, flags) is inconsistent with the operation.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A covariance matrix failed its Cholesky factorization.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// The regression design is rank deficient.
    #[error("singular design matrix; offending column(s) {columns:?}")]
    SingularDesign { columns: Vec<usize> },

    /// A cross-fitting fold lost one treatment arm entirely.
    #[error("fold degeneracy: {0}; use fewer folds so each training split keeps both arms")]
    FoldDegeneracy(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed CSV input; `line` is 1-based and counts the header.
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
