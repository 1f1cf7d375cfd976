use std::path::PathBuf;

/// Errors surfaced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: cannot decode raster: {message}")]
    Raster { path: PathBuf, message: String },
    #[error("{path}, record {record}: field `{field}`: {message}")]
    Schema {
        path: PathBuf,
        record: usize,
        field: String,
        message: String,
    },
    #[error("{path}, record {record}: attribute proportions sum to {sum}, expected a value in [0.98, 1.02]")]
    AttributeSum { path: PathBuf, record: usize, sum: f64 },
    #[error("invalid taxonomy: {0}")]
    Taxonomy(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("non-finite {term} loss")]
    NonFinite { term: &'static str },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
    #[error(transparent)]
    Metric(#[from] cos_metrics::MetricError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(context: &'static str, expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::Shape {
            context,
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }
}
