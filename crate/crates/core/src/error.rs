use thiserror::Error;

/// Errors produced anywhere in the solver pipeline.
#[derive(Debug, Error)]
pub enum PinnError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("numeric error at {location}: {detail}")]
    Numeric { location: String, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("accuracy error: {0}")]
    Accuracy(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PinnError {
    pub(crate) fn numeric(location: impl Into<String>, detail: impl Into<String>) -> Self {
        PinnError::Numeric {
            location: location.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = PinnError> = std::result::Result<T, E>;
