use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions do not fit together.
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    /// Cholesky factorization hit a non-positive pivot.
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    Singular { pivot: usize, value: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },

    #[error("non-finite value at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    /// Malformed on-disk artifact. `offset` is the byte offset where decoding failed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("synthetic data generation failed: {0}")]
    Generation(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Training { iteration: usize, detail: String },

    /// Code matrix entry that is neither +1 nor -1.
    #[error("entry ({row}, {col}) = {value} is not +1 or -1")]
    Encoding { row: usize, col: usize, value: f64 },

    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(offset: u64, detail: impl Into<String>) -> Self {
        Error::Format {
            offset,
            detail: detail.into(),
        }
    }

    /// True for errors caused by unreadable or malformed files.
    pub fn is_io_or_format(&self) -> bool {
        matches!(self, Error::Format { .. } | Error::Io(_) | Error::Json(_))
    }
}
