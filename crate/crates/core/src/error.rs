use thiserror::Error;

use crate::geometry::VoxelCoord;

/// Errors raised across the mapping, planning and simulation stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("voxel {0:?} is outside the configured grid bounds")]
    OutOfBounds(VoxelCoord),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("provider protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invalid_config(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}
