use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("BSN parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("BSN cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),

    #[error("unknown node id `{0}`")]
    Reference(String),

    #[error("action partition error: {0}")]
    Partition(String),

    #[error("replay buffer not ready: holds {size} transitions, batch needs {batch}")]
    NotReady { size: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
