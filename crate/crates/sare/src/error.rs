use std::path::{Path, PathBuf};

/// Failures of the file-level tooling, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code: 2 configuration, 3 data, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io { .. } => 3,
            Error::Diverged(_) => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<sare_core::Error> for Error {
    fn from(e: sare_core::Error) -> Self {
        use sare_core::Error as E;
        match e {
            E::Config(_) | E::ActivationIndex { .. } => Error::Config(e.to_string()),
            E::Diverged { .. } | E::NonFinite { .. } => Error::Diverged(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}
