//! 64-bit time tags and the `.etag` stream file format.
//!
//! A tag packs a 60-bit tick count (1 tick = 156 ps) with a 4-bit detector
//! channel in the top nibble. Channels 0..=3 are the H, V, P(+45°) and
//! M(−45°) ports of the four-channel analyzer.
//!
//! File layout, little-endian throughout:
//!
//! ```text
//! offset size field
//!      0    4 magic "ETAG"
//!      4    2 version (1)
//!      6    1 party (0 = Alice, 1 = Bob)
//!      7    1 reserved (0)
//!      8    8 epoch, integer seconds
//!     16    8 tag count
//!     24  8*n packed tags
//! ```

use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Duration of one tick in seconds.
pub const TICK_S: f64 = 156e-12;
pub const TICK_BITS: u32 = 60;
pub const TICK_MASK: u64 = (1u64 << TICK_BITS) - 1;
pub const MAX_CHANNEL: u8 = 15;

pub const FILE_MAGIC: [u8; 4] = *b"ETAG";
pub const FILE_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("channel {0} exceeds 4-bit range")]
    ChannelOutOfRange(u8),
    #[error("time {0} s outside the representable range")]
    TimeOutOfRange(f64),
    #[error("bad magic {0:02x?}, expected \"ETAG\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown party id {0}")]
    BadParty(u8),
    #[error("truncated stream: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("tags out of order at index {index}")]
    Unsorted { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One detection: channel + tick count.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[repr(transparent)]
pub struct TimeTag(u64);

impl TimeTag {
    pub fn from_parts(channel: u8, ticks: u64) -> Result<Self, TagError> {
        if channel > MAX_CHANNEL {
            return Err(TagError::ChannelOutOfRange(channel));
        }
        if ticks > TICK_MASK {
            return Err(TagError::TimeOutOfRange(ticks as f64 * TICK_S));
        }
        Ok(Self(((channel as u64) << TICK_BITS) | ticks))
    }

    /// Quantize `time_s` to the nearest tick.
    pub fn encode(channel: u8, time_s: f64) -> Result<Self, TagError> {
        if !(time_s >= 0.0) || !time_s.is_finite() {
            return Err(TagError::TimeOutOfRange(time_s));
        }
        let ticks = (time_s / TICK_S).round();
        if ticks > TICK_MASK as f64 {
            return Err(TagError::TimeOutOfRange(time_s));
        }
        Self::from_parts(channel, ticks as u64)
    }

    pub const fn from_packed(packed: u64) -> Self {
        Self(packed)
    }

    pub const fn packed(self) -> u64 {
        self.0
    }

    pub const fn channel(self) -> u8 {
        (self.0 >> TICK_BITS) as u8
    }

    pub const fn ticks(self) -> u64 {
        self.0 & TICK_MASK
    }

    pub fn time_s(self) -> f64 {
        self.ticks() as f64 * TICK_S
    }

    /// `(channel, time_s)`.
    pub fn decode(self) -> (u8, f64) {
        (self.channel(), self.time_s())
    }
}

impl fmt::Debug for TimeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TimeTag(ch={}, ticks={})", self.channel(), self.ticks())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn id(self) -> u8 {
        match self {
            Party::Alice => 0,
            Party::Bob => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self, TagError> {
        match id {
            0 => Ok(Party::Alice),
            1 => Ok(Party::Bob),
            other => Err(TagError::BadParty(other)),
        }
    }
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Alice => "alice",
            Party::Bob => "bob",
        })
    }
}

/// Checks the stream ordering: ticks non-decreasing, and tags sharing a
/// tick must sit on distinct channels.
pub fn check_sorted(tags: &[TimeTag]) -> Result<(), TagError> {
    let mut run_start = 0;
    for i in 1..tags.len() {
        let (prev, cur) = (tags[i - 1], tags[i]);
        if cur.ticks() < prev.ticks() {
            return Err(TagError::Unsorted { index: i });
        }
        if cur.ticks() != prev.ticks() {
            run_start = i;
            continue;
        }
        if tags[run_start..i].iter().any(|t| t.channel() == cur.channel()) {
            return Err(TagError::Unsorted { index: i });
        }
    }
    Ok(())
}

/// Ordered tags of one party on its local timescale.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagStream {
    party: Party,
    epoch: u64,
    tags: Vec<TimeTag>,
}

impl TagStream {
    pub fn new(party: Party, epoch: u64, tags: Vec<TimeTag>) -> Result<Self, TagError> {
        check_sorted(&tags)?;
        Ok(Self { party, epoch, tags })
    }

    pub fn empty(party: Party, epoch: u64) -> Self {
        Self { party, epoch, tags: Vec::new() }
    }

    pub fn party(&self) -> Party {
        self.party
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Span between first and last tag, in seconds.
    pub fn span_s(&self) -> f64 {
        match (self.tags.first(), self.tags.last()) {
            (Some(a), Some(b)) => b.time_s() - a.time_s(),
            _ => 0.0,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.tags.len());
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TagError> {
        let mut cursor = bytes;
        let stream = Self::read_from(&mut cursor)?;
        Ok(stream)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[0..4].copy_from_slice(&FILE_MAGIC);
        header[4..6].copy_from_slice(&FILE_VERSION.to_le_bytes());
        header[6] = self.party.id();
        header[7] = 0;
        header[8..16].copy_from_slice(&self.epoch.to_le_bytes());
        header[16..24].copy_from_slice(&(self.tags.len() as u64).to_le_bytes());
        w.write_all(&header)?;
        let mut buf = Vec::with_capacity(8 * 8192);
        for chunk in self.tags.chunks(8192) {
            buf.clear();
            for t in chunk {
                buf.extend_from_slice(&t.packed().to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, TagError> {
        let mut header = [0u8; HEADER_LEN];
        let got = read_full(r, &mut header)?;
        if got >= 4 && header[0..4] != FILE_MAGIC {
            return Err(TagError::BadMagic(header[0..4].try_into().unwrap()));
        }
        if got < HEADER_LEN {
            return Err(TagError::Truncated { expected: HEADER_LEN as u64, found: got as u64 });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != FILE_VERSION {
            return Err(TagError::UnsupportedVersion(version));
        }
        let party = Party::from_id(header[6])?;
        let epoch = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let count = u64::from_le_bytes(header[16..24].try_into().unwrap());
        let expected = HEADER_LEN as u64 + 8 * count;

        let mut tags = Vec::with_capacity(count.min(1 << 24) as usize);
        let mut buf = vec![0u8; 8 * 8192];
        let mut remaining = count;
        while remaining > 0 {
            let n = remaining.min(8192) as usize;
            let got = read_full(r, &mut buf[..8 * n])?;
            tags.extend(buf[..got - got % 8].chunks_exact(8).map(|c| TimeTag(u64::from_le_bytes(c.try_into().unwrap()))));
            if got < 8 * n {
                return Err(TagError::Truncated { expected, found: HEADER_LEN as u64 + got as u64 + 8 * (count - remaining) });
            }
            remaining -= n as u64;
        }
        Self::new(party, epoch, tags)
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}
