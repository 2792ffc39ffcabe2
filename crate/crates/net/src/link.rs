//! Frame I/O over byte streams, plus a fault-injecting sink for testing
//! the retransmission path.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frame::{Frame, FrameDecoder};
use crate::NetError;

pub struct FrameReader<R> {
    inner: R,
    decoder: FrameDecoder,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, decoder: FrameDecoder::new(), buf: vec![0; 1 << 16] }
    }

    /// Next frame; `Ok(None)` on a clean end of stream between frames.
    /// A read timeout on the underlying stream surfaces as `Timeout`.
    pub fn read_frame(&mut self) -> Result<Option<Frame>, NetError> {
        loop {
            if let Some(f) = self.decoder.next_frame()? {
                return Ok(Some(f));
            }
            let n = match self.inner.read(&mut self.buf) {
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                    return Err(NetError::Timeout)
                }
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                return if self.decoder.pending() == 0 { Ok(None) } else { Err(NetError::ConnectionClosed) };
            }
            self.decoder.feed(&self.buf[..n]);
        }
    }
}

/// Where outgoing frames go.
pub trait FrameSink {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError>;
}

pub struct FrameWriter<W> {
    inner: W,
    buf: Vec<u8>,
}

impl<W: Write> FrameWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner, buf: Vec::new() }
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write> FrameSink for FrameWriter<W> {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        self.buf.clear();
        frame.encode_into(&mut self.buf)?;
        self.inner.write_all(&self.buf)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Faults applied to outgoing frames.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FaultPlan {
    /// Probability that a tag batch silently disappears.
    pub drop_prob: f64,
    /// Break the link after this many frames have been sent.
    pub cut_after_frames: Option<u64>,
    pub seed: u64,
}

/// Wraps a sink and loses tag batches at random, or cuts the link.
pub struct LossySink<S> {
    inner: S,
    plan: FaultPlan,
    rng: ChaCha8Rng,
    sent: u64,
    dropped: u64,
}

impl<S: FrameSink> LossySink<S> {
    pub fn new(inner: S, plan: FaultPlan) -> Self {
        Self { inner, plan, rng: ChaCha8Rng::seed_from_u64(plan.seed), sent: 0, dropped: 0 }
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

impl<S: FrameSink> FrameSink for LossySink<S> {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        if self.plan.cut_after_frames.is_some_and(|n| self.sent >= n) {
            return Err(NetError::Io(io::Error::new(io::ErrorKind::ConnectionReset, "link cut by fault plan")));
        }
        self.sent += 1;
        if matches!(frame, Frame::TagBatch { .. }) && self.plan.drop_prob > 0.0 && self.rng.random_bool(self.plan.drop_prob) {
            self.dropped += 1;
            return Ok(());
        }
        self.inner.send(frame)
    }
}

impl<S: FrameSink + ?Sized> FrameSink for Box<S> {
    fn send(&mut self, frame: &Frame) -> Result<(), NetError> {
        (**self).send(frame)
    }
}
