use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid configuration, shapes or preconditions.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed serialized input.
    #[error("format error: {0}")]
    Format(String),
    /// A loss or parameter went non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),
    /// Fitness evaluation failed during search.
    #[error("fitness evaluation failed at generation {generation}, individual {individual}: {message}")]
    Fitness {
        generation: usize,
        individual: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
}
