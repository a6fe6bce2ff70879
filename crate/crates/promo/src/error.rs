use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] promo_core::Error),
    #[error("not a {0} file")]
    BadMagic(&'static str),
    #[error("unsupported {kind} version {version}")]
    Version { kind: &'static str, version: u16 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("config hash mismatch: artifact has {artifact}, run has {run}")]
    HashMismatch { artifact: String, run: String },
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
