use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] milvad_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}: {message}", path.display())]
    Parse { path: PathBuf, line: u64, message: String },

    #[error("{}: {message}", path.display())]
    InvalidFile { path: PathBuf, message: String },

    #[error("missing feature file {}", .0.display())]
    MissingFeatureFile(PathBuf),

    #[error("checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint {}: unsupported format version {found:?}", path.display())]
    VersionMismatch { path: PathBuf, found: String },

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 1 for invalid input or configuration, 2 for
    /// failures while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Core(milvad_core::Error::NonFiniteLoss { .. }) => 2,
            _ => 1,
        }
    }
}
