use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid board: {0}")]
    InvalidBoard(String),

    #[error("state is terminal")]
    TerminalState,

    #[error("illegal action {action} in state {state}")]
    IllegalAction { action: usize, state: String },

    #[error("malformed distribution: {0}")]
    MalformedDistribution(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite {what} in {head} head")]
    NonFinite {
        head: &'static str,
        what: &'static str,
    },

    #[error("missing opponent-model targets: {0}")]
    MissingOpponentTargets(String),

    #[error("missing opponent policy for seat {0}")]
    MissingOpponentPolicy(usize),

    #[error("opponent in seat {seat} chose illegal action {action}")]
    OpponentIllegalAction { seat: usize, action: usize },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("inference service is shut down")]
    ServiceShutdown,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
