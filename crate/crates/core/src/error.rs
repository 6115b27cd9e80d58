use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("node index {index} out of range for {node_count} nodes")]
    IndexOutOfRange { index: usize, node_count: usize },

    #[error("inconsistent node count: {0}")]
    InconsistentNodeCount(String),

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("degenerate row {row}: norm below 1e-12")]
    DegenerateRow { row: usize },

    #[error("tape already consumed by a previous backward pass")]
    GraphConsumed,

    #[error("relation {0} has no edges")]
    EmptyRelation(usize),

    #[error("empty input list for {0}")]
    EmptyList(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),

    #[error("scores contain a single class")]
    SingleClass,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("exactly one of threshold or top-k must be given")]
    ConflictingSelectors,

    #[error("not enough nodes for injection: need {needed}, have {available}")]
    InsufficientNodes { needed: usize, available: usize },

    #[error("parameters look untrained (all encoder weights are zero)")]
    UntrainedParams,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by non-finite or collapsed numeric state.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_) | Error::DegenerateRow { .. })
    }
}
