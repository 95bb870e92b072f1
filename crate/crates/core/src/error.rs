use std::io;

use thiserror::Error;

/// Errors produced by the extension engine and its building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("level {level} out of range 1..={depth}")]
    LevelOutOfRange { level: usize, depth: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("correlation pool exhausted: requested {requested}, {available} available; replenishment required")]
    PoolExhausted { requested: usize, available: usize },
    #[error("batch of {available} correlations cannot cover {requested}")]
    InsufficientBatch { requested: usize, available: usize },
    #[error("correlation {0} already consumed")]
    AlreadyConsumed(usize),
    #[error("delta must be nonzero")]
    ZeroDelta,
    #[error("handshake mismatch: peer parameters or matrix seed differ")]
    HandshakeMismatch,
    #[error("session {0} already open on this endpoint")]
    SessionCollision(u16),
    #[error("peer closed the connection")]
    PeerClosed,
    #[error("frame payload of {0} bytes exceeds the 64 MiB cap")]
    FrameTooLarge(usize),
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("unexpected message type: expected {expected}, got {got}")]
    UnexpectedMsgType { expected: u8, got: u8 },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{context}: {source}")]
    Connect {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for failures of the underlying byte channel.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::PeerClosed
                | Error::FrameTooLarge(_)
                | Error::UnknownMsgType(_)
                | Error::Connect { .. }
                | Error::Io(_)
        )
    }
}
