use std::path::PathBuf;

/// Every failure the toolkit can report. Variants map one-to-one onto the
/// error kinds documented for each operation.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot normalize {context}: vector is all zeros")]
    Normalization { context: String },

    #[error("cosine distance undefined: {0}")]
    Distance(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("cannot aggregate: {0}")]
    Aggregation(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("rating {value} for concept `{concept}`, attribute `{attribute}` is outside [0, 6]")]
    Range {
        concept: String,
        attribute: String,
        value: f64,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn normalization(context: impl Into<String>) -> Self {
        Error::Normalization {
            context: context.into(),
        }
    }
}
