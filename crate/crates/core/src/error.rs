use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid score vector: {0}")]
    InvalidScore(String),
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),
    #[error("cannot fuse an empty cluster")]
    EmptyCluster,
    #[error("v-avg box fusion requires a box variance, missing on detection {det_id}")]
    MissingVariance { det_id: u64 },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors caused by malformed input bytes rather than settings.
    pub fn is_parse(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Io(_))
    }
}
