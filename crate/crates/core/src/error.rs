use std::path::PathBuf;

/// Error type shared across the pipeline.
///
/// `Io`, `Decode`, `Data` and `Config` describe problems with user-supplied
/// inputs; `Diverged` is an internal training failure. The CLI maps the
/// former to exit code 2 and the latter to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: decode error at byte {offset}: {reason}")]
    Decode {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss} (batch songs: {songs:?})")]
    Diverged {
        step: u64,
        loss: f64,
        songs: Vec<String>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn decode(path: impl Into<PathBuf>, offset: u64, reason: impl Into<String>) -> Self {
        Error::Decode {
            path: path.into(),
            offset,
            reason: reason.into(),
        }
    }

    /// True when the error points at bad user input rather than an internal
    /// failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
