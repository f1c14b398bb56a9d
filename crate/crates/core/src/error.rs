use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate vector: norm is zero or not finite")]
    DegenerateVector,
    #[error("degenerate embedding at row {row}: pre-normalization output has zero norm")]
    DegenerateEmbedding { row: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("vector at row {row} is not unit length (norm {norm})")]
    NotUnit { row: usize, norm: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("zero class separation between classes {a} and {b} (distance {distance:e})")]
    ZeroClassSeparation { a: usize, b: usize, distance: f64 },
    #[error("zero sub-cluster separation between classes {a} and {b} (distance {distance:e})")]
    ZeroSubclusterSeparation { a: usize, b: usize, distance: f64 },
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("diverged: non-finite gradient")]
    Diverged,
    #[error("numerical abort at epoch {epoch}: {source}")]
    NumericalAbort {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("non-contiguous labels: class {missing} has no samples")]
    NonContiguousLabels { missing: usize },
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that indicate the embedding geometry collapsed.
    pub fn is_zero_separation(&self) -> bool {
        matches!(
            self,
            Error::ZeroClassSeparation { .. } | Error::ZeroSubclusterSeparation { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
