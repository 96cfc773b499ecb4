use std::path::{Path, PathBuf};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] patchmix_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("{phase} failed: {source}")]
    Phase {
        phase: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Core(patchmix_core::Error::Config(msg.into()))
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Core(patchmix_core::Error::Format(msg.into()))
    }

    pub fn in_phase(self, phase: &'static str) -> Self {
        Error::Phase { phase, source: Box::new(self) }
    }

    /// Process exit code: 2 for configuration problems, 3 for numeric
    /// failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Core(patchmix_core::Error::Config(_)) | Error::ConfigFile { .. } => 2,
            Error::Core(patchmix_core::Error::Numeric(_)) => 3,
            Error::Phase { source, .. } => source.exit_code(),
            _ => 1,
        }
    }
}
