//! Streaming of time tags between the two stations of the link.
//!
//! Bob's station connects to Alice's and streams its tags in numbered
//! batches over a small framed protocol with Go-Back-N retransmission.
//! Alice's station extracts coincidences while the tags arrive, with the
//! same result the offline analysis gives on the complete recording.

pub mod frame;
pub mod link;
pub mod online;
pub mod session;

use std::io;

use skylink_core::sync::SyncError;
use thiserror::Error;

pub use frame::{Frame, FrameDecoder, FrameType, Hello, Stats};
pub use link::{FaultPlan, FrameReader, FrameSink, FrameWriter, LossySink};
pub use online::{OnlineCoincidence, OnlineResult, PhaseChange, SessionPhase, SyncEpoch};
pub use session::{
    agree_epoch, receive_tags, run_receiver, send_tags, AliceOutcome, ReceiverConfig, ReceiverReport, SenderConfig,
    SenderReport,
};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown frame type {0}")]
    UnknownFrameType(u8),
    #[error("payload of {0} bytes exceeds the limit")]
    PayloadTooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("timed out waiting for the peer")]
    Timeout,
    #[error("connection closed mid-session")]
    ConnectionClosed,
    #[error("session epochs differ by {delta_ms} ms")]
    EpochDisagreement { delta_ms: u64 },
    #[error("batch size mismatch: local {local}, remote {remote}")]
    BatchSizeMismatch { local: u32, remote: u32 },
    #[error("unexpected {0:?} frame")]
    UnexpectedFrame(FrameType),
    #[error("synchronization failed: {0}")]
    Sync(#[from] SyncError),
}

impl NetError {
    /// Errors after which reconnecting and resuming makes sense.
    pub fn is_transient(&self) -> bool {
        matches!(self, NetError::Io(_) | NetError::ConnectionClosed)
    }
}
