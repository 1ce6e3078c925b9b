use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no interactions")]
    NoInteractions,

    #[error("unknown node type `{0}`")]
    UnknownNodeType(String),

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("invalid meta-path `{path}`: {reason}")]
    InvalidMetaPath { path: String, reason: String },

    #[error("isolated user {0}: no meta-path reaches any item")]
    IsolatedUser(usize),

    #[error("no supporting path from user {user} to item {item}")]
    NoSupportingPath { user: usize, item: usize },

    #[error("forward pass did not retain intermediates")]
    MissingIntermediates,

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

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

    /// Errors caused by the user's input rather than by a failed run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::UnknownNodeType(_)
                | Error::UnknownRelation(_)
                | Error::InvalidMetaPath { .. }
                | Error::InvalidArgument(_)
                | Error::NoInteractions
        )
    }
}
