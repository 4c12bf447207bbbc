use std::path::PathBuf;

/// Errors produced anywhere in the curation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    #[error("no exemplars available for group {0}")]
    NoExemplars(usize),

    #[error("diagnostics unavailable: {0}")]
    DiagnosticsUnavailable(String),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("incomplete annotation: {0}")]
    IncompleteAnnotation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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

pub type Result<T, E = Error> = std::result::Result<T, E>;
