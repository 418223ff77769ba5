use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("numerical error for class {class}: {message}")]
    Numerical { class: i32, message: String },

    #[error("archive member `{member}`: {source}")]
    Member {
        member: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Format,
    Numerical,
    Io,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Validation(_) => ErrorKind::Config,
            Error::Parse(_) | Error::UnsupportedFormat(_) => ErrorKind::Format,
            Error::Fit(_) | Error::Numerical { .. } => ErrorKind::Numerical,
            Error::Io { .. } => ErrorKind::Io,
            Error::Member { source, .. } => source.kind(),
        }
    }
}
