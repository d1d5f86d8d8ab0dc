use std::path::PathBuf;

use crate::checkpoint::CheckpointError;
use crate::idx::IdxError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad configuration, arguments or input files.
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(#[from] IdxError),
    #[error("malformed log {}: {message}", path.display())]
    Log { path: PathBuf, message: String },
    #[error("simulation failed: {0}")]
    Sim(#[from] fedaccess_core::Error),
    #[error("cannot write {}: {source}", path.display())]
    Write { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl Error {
    /// 2 for problems detected before a run starts, 1 for failures during it.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dataset(_) | Error::Log { .. } => 2,
            Error::Sim(_) | Error::Write { .. } | Error::Checkpoint(_) => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
