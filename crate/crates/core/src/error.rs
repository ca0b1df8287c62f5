use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A shape or size constraint was violated. `axis` names the offending dimension.
    #[error("dimension error on {axis}: {message}")]
    Dimension { axis: &'static str, message: String },

    /// A precondition on arguments that is not about shapes.
    #[error("contract violated: {0}")]
    Contract(String),

    /// Malformed image or checkpoint bytes.
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("dataset error ({}): {message}", path.display())]
    Dataset { path: PathBuf, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Training could not continue (non-finite gradient or loss).
    #[error("training error: {0}")]
    Training(String),

    #[error("i/o error ({}): {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(axis: &'static str, message: impl Into<String>) -> Self {
        Error::Dimension {
            axis,
            message: message.into(),
        }
    }

    pub(crate) fn contract(message: impl Into<String>) -> Self {
        Error::Contract(message.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
