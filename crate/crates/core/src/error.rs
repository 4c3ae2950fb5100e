use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed input file content.
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },

    /// A corpus record that cannot be interpreted.
    #[error("record `{id}`: {message}")]
    Record { id: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn format(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    ///
    /// | code | class |
    /// |------|-------|
    /// | 2 | configuration |
    /// | 3 | format / record |
    /// | 4 | contract |
    /// | 5 | empty result |
    /// | 1 | I/O and anything else |
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Format { .. } | Error::Record { .. } | Error::Json(_) => 3,
            Error::Contract(_) => 4,
            Error::EmptyResult(_) => 5,
            Error::Io { .. } | Error::Csv(_) => 1,
        }
    }
}
