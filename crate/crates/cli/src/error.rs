use std::io;
use std::path::PathBuf;

use skylink_core::bell::BellError;
use skylink_core::qkd::QkdError;
use skylink_core::scenario::ScenarioError;
use skylink_core::sim::SimError;
use skylink_core::sync::SyncError;
use skylink_core::timetag::TagError;
use skylink_net::NetError;
use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_SCHEMA: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_SYNC: u8 = 5;
pub const EXIT_KEY_EXHAUSTED: u8 = 6;
pub const EXIT_TIMEOUT: u8 = 7;
pub const EXIT_NETWORK: u8 = 8;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Tags { path: PathBuf, source: TagError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("synchronization failed: {0}")]
    Sync(#[from] SyncError),
    #[error("{0}")]
    Bell(#[from] BellError),
    #[error("key distillation failed: {0}")]
    Key(#[from] QkdError),
    #[error("{0}")]
    Net(#[from] NetError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario(ScenarioError::Io(_)) => EXIT_IO,
            CliError::Scenario(_) | CliError::Sim(_) => EXIT_SCHEMA,
            CliError::Tags { .. } | CliError::Io { .. } => EXIT_IO,
            CliError::Sync(_) | CliError::Net(NetError::Sync(_)) => EXIT_SYNC,
            CliError::Key(_) => EXIT_KEY_EXHAUSTED,
            CliError::Net(NetError::Timeout) => EXIT_TIMEOUT,
            CliError::Net(_) => EXIT_NETWORK,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Bell(_) => EXIT_OTHER,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
