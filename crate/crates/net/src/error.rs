use thiserror::Error;

use crate::protocol::{ErrorCode, ProtocolError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{code:?}: {detail}")]
    Remote { code: ErrorCode, detail: String },
    #[error("results log: {0}")]
    Log(String),
    #[error(transparent)]
    Core(#[from] pqn_core::Error),
}

impl NetError {
    pub fn remote(code: ErrorCode, detail: impl Into<String>) -> Self {
        NetError::Remote { code, detail: detail.into() }
    }

    /// Code reported to a peer when this error ends a request.
    pub fn code(&self) -> ErrorCode {
        match self {
            NetError::Remote { code, .. } => *code,
            NetError::Protocol(ProtocolError::Closed) | NetError::Io(_) => ErrorCode::NodeFailed,
            NetError::Protocol(_) => ErrorCode::Protocol,
            NetError::Log(_) => ErrorCode::Storage,
            NetError::Config(_) | NetError::Core(_) => ErrorCode::Internal,
        }
    }
}

pub type NetResult<T> = Result<T, NetError>;
