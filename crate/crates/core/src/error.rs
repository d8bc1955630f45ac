use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not conform.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// A layer list cannot be assembled into a consistent graph.
    #[error("invalid architecture at layer {layer}: {detail}")]
    Build { layer: usize, detail: String },

    /// A state snapshot does not fit the graph it is restored into.
    #[error("snapshot mismatch: {0}")]
    Snapshot(String),

    #[error("index {index} out of range ({detail})")]
    Index { index: usize, detail: String },

    /// Malformed PGM payload; `offset` is the byte position of the problem.
    #[error("pgm parse error at byte {offset}: {detail}")]
    Pgm { offset: usize, detail: String },

    #[error("dataset ingestion failed: {0}")]
    Ingest(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
