use std::path::PathBuf;

/// Library-wide error type.
///
/// `Config` covers invalid parameters and unknown settings (a usage problem),
/// while `Io`/`Format`/`Data` cover problems with input files and corpora.
/// The CLI maps the former to exit code 1 and the latter to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed file contents (bad magic, truncated data, unparseable lines).
    #[error("{0}")]
    Format(String),

    /// Semantically invalid data (duplicate ids, inconsistent labels, ...).
    #[error("{0}")]
    Data(String),

    /// Invalid configuration or arguments.
    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
