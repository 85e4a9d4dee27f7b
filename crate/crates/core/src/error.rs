use alloc::string::String;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A parameter or argument violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),
    /// Tensor rows do not line up with the manifest, or the pooling flag
    /// contradicts the tensor rank.
    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),
    /// Non-finite or otherwise unusable values in the data.
    #[error("bad data: {0}")]
    Data(String),
    /// Tensor rank or dimensions are not supported.
    #[error("bad shape: {0}")]
    Shape(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! input_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Input(alloc::format!($($arg)*))
    };
}
pub(crate) use input_err;
