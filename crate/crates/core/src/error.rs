use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants fall into two families that the CLI maps to distinct exit codes:
/// validation problems (bad documents, illegal graphs, bad configs) and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("node `{node}`: {kind}")]
    Validation { node: String, kind: ValidationKind },

    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },

    #[error("missing schedule for workload `{0}`")]
    MissingSchedule(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{0}")]
    Attack(String),

    #[error("cell ({model}, trials={trials}, seed={seed}): {source}")]
    Cell {
        model: String,
        trials: u32,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationKind {
    #[error("cycle")]
    Cycle,
    #[error("duplicate id")]
    DuplicateId,
    #[error("dangling input `{0}`")]
    DanglingInput(String),
    #[error("illegal attrs: {0}")]
    IllegalAttrs(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

impl Error {
    pub(crate) fn validation(node: impl Into<String>, kind: ValidationKind) -> Self {
        Error::Validation {
            node: node.into(),
            kind,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the inputs.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Cell { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
