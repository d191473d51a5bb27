use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched or otherwise invalid tensor shapes / argument values.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A training loss became non-finite; names the offending term.
    #[error("non-finite loss in term `{term}` at step {step}")]
    NonFiniteLoss { term: String, step: u64 },

    /// Malformed run configuration (names the offending key).
    #[error("invalid config key `{0}`")]
    InvalidConfigKey(String),

    #[error("config value for `{key}`: {msg}")]
    InvalidConfigValue { key: String, msg: String },

    /// Checkpoint file could not be parsed or does not match the model.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image: {0}")]
    Image(String),
}

impl From<image::ImageError> for Error {
    fn from(e: image::ImageError) -> Self {
        Error::Image(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
