//! Wire frames. Every frame is a 12-byte little-endian header followed by
//! `len` payload bytes:
//!
//! ```text
//! 0..4   magic "ELNK"
//! 4..6   version (u16)
//! 6      frame type (u8)
//! 7      flags (u8)
//! 8..12  payload length (u32)
//! ```

use skylink_core::timetag::TimeTag;

use crate::NetError;

pub const MAGIC: [u8; 4] = *b"ELNK";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 12;
/// Most tags one batch may carry.
pub const MAX_BATCH: usize = 65_535;
/// Largest payload accepted: a full tag batch.
pub const MAX_PAYLOAD: usize = 10 + 8 * MAX_BATCH;

/// Header flag on ACK: a gap was detected and the sender should go back.
pub const FLAG_GAP: u8 = 0x01;
/// Header flag on TAG_BATCH: this batch was sent before.
pub const FLAG_RETRANSMIT: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    EpochSync = 2,
    TagBatch = 3,
    Stats = 4,
    Bye = 5,
    Ack = 6,
}

impl FrameType {
    pub fn from_u8(v: u8) -> Result<Self, NetError> {
        Ok(match v {
            1 => Self::Hello,
            2 => Self::EpochSync,
            3 => Self::TagBatch,
            4 => Self::Stats,
            5 => Self::Bye,
            6 => Self::Ack,
            other => return Err(NetError::UnknownFrameType(other)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hello {
    /// Sending party id (0 Alice, 1 Bob).
    pub party: u8,
    /// Tags per batch; both ends must agree for resumption to line up.
    pub batch_size: u32,
    /// Receiver: first batch it still needs. Sender: zero.
    pub resume_from: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Stats {
    pub tags_sent: u64,
    pub drops: u64,
    /// Live coincidence rate in milli-counts per second.
    pub rate_millicps: u64,
    pub retransmissions: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Hello(Hello),
    /// Local session start in Unix milliseconds.
    EpochSync { start_ms: u64 },
    TagBatch { seq: u64, retransmit: bool, tags: Vec<TimeTag> },
    Stats(Stats),
    Bye,
    /// Every batch below `next` has arrived.
    Ack { next: u64, gap: bool },
}

impl Frame {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Frame::Hello(_) => FrameType::Hello,
            Frame::EpochSync { .. } => FrameType::EpochSync,
            Frame::TagBatch { .. } => FrameType::TagBatch,
            Frame::Stats(_) => FrameType::Stats,
            Frame::Bye => FrameType::Bye,
            Frame::Ack { .. } => FrameType::Ack,
        }
    }

    fn flags(&self) -> u8 {
        match self {
            Frame::TagBatch { retransmit: true, .. } => FLAG_RETRANSMIT,
            Frame::Ack { gap: true, .. } => FLAG_GAP,
            _ => 0,
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            Frame::Hello(_) => 13,
            Frame::EpochSync { .. } => 8,
            Frame::TagBatch { tags, .. } => 10 + 8 * tags.len(),
            Frame::Stats(_) => 32,
            Frame::Bye => 0,
            Frame::Ack { .. } => 8,
        }
    }

    /// Appends the encoded frame to `out`.
    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<(), NetError> {
        if let Frame::TagBatch { tags, .. } = self {
            if tags.len() > MAX_BATCH {
                return Err(NetError::PayloadTooLarge(10 + 8 * tags.len()));
            }
        }
        let len = self.payload_len();
        out.reserve(HEADER_LEN + len);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.frame_type() as u8);
        out.push(self.flags());
        out.extend_from_slice(&(len as u32).to_le_bytes());
        match self {
            Frame::Hello(h) => {
                out.push(h.party);
                out.extend_from_slice(&h.batch_size.to_le_bytes());
                out.extend_from_slice(&h.resume_from.to_le_bytes());
            }
            Frame::EpochSync { start_ms } => out.extend_from_slice(&start_ms.to_le_bytes()),
            Frame::TagBatch { seq, tags, .. } => {
                out.extend_from_slice(&seq.to_le_bytes());
                out.extend_from_slice(&(tags.len() as u16).to_le_bytes());
                for t in tags {
                    out.extend_from_slice(&t.packed().to_le_bytes());
                }
            }
            Frame::Stats(s) => {
                for v in [s.tags_sent, s.drops, s.rate_millicps, s.retransmissions] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Frame::Bye => {}
            Frame::Ack { next, .. } => out.extend_from_slice(&next.to_le_bytes()),
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>, NetError> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    fn decode_payload(kind: FrameType, flags: u8, p: &[u8]) -> Result<Self, NetError> {
        let u64_at = |i: usize| u64::from_le_bytes(p[i..i + 8].try_into().expect("8 bytes"));
        let want = |n: usize| if p.len() == n { Ok(()) } else { Err(NetError::Malformed("payload length")) };
        Ok(match kind {
            FrameType::Hello => {
                want(13)?;
                Frame::Hello(Hello {
                    party: p[0],
                    batch_size: u32::from_le_bytes(p[1..5].try_into().expect("4 bytes")),
                    resume_from: u64_at(5),
                })
            }
            FrameType::EpochSync => {
                want(8)?;
                Frame::EpochSync { start_ms: u64_at(0) }
            }
            FrameType::TagBatch => {
                if p.len() < 10 {
                    return Err(NetError::Malformed("payload length"));
                }
                let n = u16::from_le_bytes([p[8], p[9]]) as usize;
                want(10 + 8 * n)?;
                let tags: Vec<TimeTag> = p[10..].chunks_exact(8).map(|c| TimeTag::from_packed(u64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
                if tags.windows(2).any(|w| w[0].ticks() > w[1].ticks()) {
                    return Err(NetError::Malformed("tag batch not sorted"));
                }
                Frame::TagBatch { seq: u64_at(0), retransmit: flags & FLAG_RETRANSMIT != 0, tags }
            }
            FrameType::Stats => {
                want(32)?;
                Frame::Stats(Stats { tags_sent: u64_at(0), drops: u64_at(8), rate_millicps: u64_at(16), retransmissions: u64_at(24) })
            }
            FrameType::Bye => {
                want(0)?;
                Frame::Bye
            }
            FrameType::Ack => {
                want(8)?;
                Frame::Ack { next: u64_at(0), gap: flags & FLAG_GAP != 0 }
            }
        })
    }
}

/// Incremental decoder: bytes go in as they arrive, complete frames come out.
/// Fragment boundaries are irrelevant.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start == self.buf.len() {
            self.buf.clear();
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes held that do not yet form a frame.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Next complete frame, `Ok(None)` if more bytes are needed. A malformed
    /// header is fatal: the stream cannot be resynchronized.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, NetError> {
        let avail = &self.buf[self.start..];
        if avail.len() >= 4 && avail[..4] != MAGIC {
            return Err(NetError::BadMagic(avail[..4].try_into().expect("4 bytes")));
        }
        if avail.len() < HEADER_LEN {
            return Ok(None);
        }
        let version = u16::from_le_bytes([avail[4], avail[5]]);
        if version != VERSION {
            return Err(NetError::UnsupportedVersion(version));
        }
        let kind = FrameType::from_u8(avail[6])?;
        let flags = avail[7];
        let len = u32::from_le_bytes(avail[8..12].try_into().expect("4 bytes")) as usize;
        if len > MAX_PAYLOAD {
            return Err(NetError::PayloadTooLarge(len));
        }
        if avail.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let frame = Frame::decode_payload(kind, flags, &avail[HEADER_LEN..HEADER_LEN + len])?;
        self.start += HEADER_LEN + len;
        if self.start > 1 << 16 && self.start * 2 > self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        Ok(Some(frame))
    }
}
