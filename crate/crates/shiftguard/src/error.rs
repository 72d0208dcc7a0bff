//! Crate-wide error type.

use std::path::PathBuf;

/// Errors surfaced by every module in this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes violate an operation's contract.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A value-level precondition failed (bad probability row, label
    /// outside {{0,1}}, non-positive temperature, ...).
    #[error("invalid argument in {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    /// A graph violates a structural invariant.
    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// An operation that needs ground-truth labels got an unlabeled graph.
    #[error("labels required")]
    LabelsRequired,

    /// The confident-normal selection came back empty.
    #[error("no confident normals")]
    NoConfidentNormals,

    /// `backward` was called twice on the same tape.
    #[error("tape already consumed")]
    TapeConsumed,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A file exists but its contents do not match the expected format.
    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
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

    pub(crate) fn parse(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
