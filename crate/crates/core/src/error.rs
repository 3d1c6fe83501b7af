use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("feature-dim mismatch for type {node_type}: expected {expected}, found {found}")]
    FeatureDim {
        node_type: String,
        expected: usize,
        found: usize,
    },

    #[error("duplicate edge ({src}, {dst}) in relation {relation}")]
    DuplicateEdge {
        relation: String,
        src: usize,
        dst: usize,
    },

    #[error("invalid split: {0}")]
    Split(String),

    #[error("unknown relation {0}")]
    UnknownRelation(String),

    #[error("unknown node type {0}")]
    UnknownNodeType(String),

    #[error("metapath set is not prefix-closed: {0} has no parent")]
    NotPrefixClosed(String),

    #[error("metapath {0} does not end at the target type")]
    NotLabelPath(String),

    #[error("exact-set aggregation refused: node {node} on metapath {metapath} exceeds the expansion ceiling of {ceiling} path expansions")]
    ExpansionCeiling {
        node: usize,
        metapath: String,
        ceiling: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("missing table: {0}")]
    MissingTable(String),

    #[error("backward called twice on the same tape without reset")]
    BackwardTwice,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn format(context: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            context: context.into(),
            message: message.to_string(),
        }
    }
}
