use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use concept_forge_core::Error as CoreError;

/// Everything that can stop a forge command. [`ForgeError::exit_code`]
/// splits them into input problems (2) and data problems (3).
#[derive(Debug, thiserror::Error)]
pub enum ForgeError {
    #[error("{0}")]
    Input(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("malformed NPY: {0}")]
    Format(String),
    #[error("unsupported NPY: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Core(#[from] CoreError),
    /// A failure remembered by a cache and handed to every waiter.
    #[error(transparent)]
    Shared(Arc<ForgeError>),
}

pub type Result<T, E = ForgeError> = std::result::Result<T, E>;

impl ForgeError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Io { .. } | Self::Config { .. } => 2,
            Self::Core(CoreError::Input(_)) => 2,
            Self::Format(_) | Self::Unsupported(_) | Self::Core(_) => 3,
            Self::Shared(e) => e.exit_code(),
        }
    }
}
