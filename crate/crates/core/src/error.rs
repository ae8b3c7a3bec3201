use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file or buffer does not match the expected layout.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    /// The ODE produced a non-finite value.
    #[error("integration error at step {step}, row {row}: {reason}")]
    Integration {
        step: usize,
        row: usize,
        reason: String,
    },

    /// All neighbours coincide with the query, so a distance ratio is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("score bridge: {0}")]
    Bridge(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Re-labels an integration error with the diffusion step it occurred in.
    /// A bridge failure mid-integration becomes an integration error too.
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            Error::Integration { row, reason, .. } => Error::Integration { step, row, reason },
            Error::Bridge(msg) => Error::Integration {
                step,
                row: 0,
                reason: format!("score bridge: {msg}"),
            },
            other => other,
        }
    }
}
