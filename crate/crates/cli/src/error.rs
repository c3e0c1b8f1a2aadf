use std::path::PathBuf;

use stv_core::StvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}", path = .path.display())]
    ConfigLine { path: PathBuf, line: usize, message: String },

    #[error("invalid value {value:?} for {key}: {message}")]
    ConfigValue { key: String, value: String, message: String },

    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),

    #[error("missing required setting `{0}` (pass --{0} or set it in the config file)")]
    Missing(&'static str),

    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] StvError),

    #[error("I/O error on {path}: {source}", path = .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}
