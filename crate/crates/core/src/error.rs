use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The CLI maps each variant onto a process exit code, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("missing weights: {}", .0.join(", "))]
    MissingWeights(Vec<String>),

    #[error("unknown weights: {}", .0.join(", "))]
    UnknownWeights(Vec<String>),

    #[error("corrupt file at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error("invalid config file: {0}")]
    ConfigFile(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// 0 success, 2 input/shape error, 3 missing weights, 4 corrupt file.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::ConfigFile(_) | Error::Io(_) => 2,
            Error::MissingWeights(_) | Error::UnknownWeights(_) => 3,
            Error::Corrupt { .. } => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
