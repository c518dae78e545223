use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("capacity error: {0}")]
    Capacity(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("state error: {0}")]
    State(String),
    #[error("index error: {0}")]
    Index(String),
    #[error("export error: {0}")]
    Export(String),
    #[error("format error at byte {pos}: {msg}")]
    Format { pos: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn format(pos: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            pos,
            msg: msg.into(),
        }
    }

    /// Strips any seed wrapper and returns the underlying error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seed { source, .. } => source.root(),
            e => e,
        }
    }
}
