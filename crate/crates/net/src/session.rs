//! Both ends of a tag-streaming session over TCP.
//!
//! Bob connects, both sides exchange HELLO and EPOCH_SYNC, then Bob sends
//! TAG_BATCH frames inside a sliding window. Alice acknowledges every batch
//! cumulatively and flags the first gap she sees; Bob goes back to the
//! oldest unacknowledged batch on a gap or after a timeout. A dropped
//! connection is resumed from the first batch Alice is still missing.
//! Bob closes with STATS and BYE; Alice answers with her final STATS and BYE.

use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use skylink_core::analysis::AnalysisConfig;
use skylink_core::timetag::{Party, TimeTag};

use crate::frame::{Frame, Hello, Stats, MAX_BATCH};
use crate::link::{FaultPlan, FrameReader, FrameSink, FrameWriter, LossySink};
use crate::online::{OnlineCoincidence, OnlineResult, PhaseChange, SessionPhase};
use crate::NetError;

/// Session epoch both sides use, in whole seconds: the earlier of the two
/// local start times. Fails if the starts are further apart than
/// `tolerance_ms`.
pub fn agree_epoch(local_ms: u64, remote_ms: u64, tolerance_ms: u64) -> Result<u64, NetError> {
    let delta_ms = local_ms.abs_diff(remote_ms);
    if delta_ms > tolerance_ms {
        return Err(NetError::EpochDisagreement { delta_ms });
    }
    Ok(local_ms.min(remote_ms) / 1000)
}

fn expect_hello(frame: Option<Frame>) -> Result<Hello, NetError> {
    match frame {
        Some(Frame::Hello(h)) => Ok(h),
        Some(f) => Err(NetError::UnexpectedFrame(f.frame_type())),
        None => Err(NetError::ConnectionClosed),
    }
}

fn expect_epoch(frame: Option<Frame>) -> Result<u64, NetError> {
    match frame {
        Some(Frame::EpochSync { start_ms }) => Ok(start_ms),
        Some(f) => Err(NetError::UnexpectedFrame(f.frame_type())),
        None => Err(NetError::ConnectionClosed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenderConfig {
    pub batch_size: u32,
    /// Batches in flight before an acknowledgement is needed.
    pub window: u64,
    pub retransmit_timeout: Duration,
    /// Give up after this long without progress.
    pub idle_timeout: Duration,
    pub epoch_tolerance_ms: u64,
    pub max_reconnects: u32,
    /// Keep trying to reach Alice for this long before giving up.
    pub connect_timeout: Duration,
}

impl Default for SenderConfig {
    fn default() -> Self {
        Self {
            batch_size: 4096,
            window: 16,
            retransmit_timeout: Duration::from_millis(200),
            idle_timeout: Duration::from_secs(30),
            epoch_tolerance_ms: 500,
            max_reconnects: 3,
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SenderReport {
    pub epoch_s: u64,
    pub batches: u64,
    pub tags_sent: u64,
    pub retransmissions: u64,
    pub drops: u64,
    pub reconnects: u32,
    /// Alice's last STATS frame.
    pub remote: Option<Stats>,
}

/// Streams Bob's tags to Alice at `addr`. `faults` applies to the first
/// connection; reconnections keep the drop rate but are never cut.
pub fn send_tags(
    addr: impl ToSocketAddrs,
    tags: &[TimeTag],
    start_ms: u64,
    cfg: &SenderConfig,
    faults: FaultPlan,
) -> Result<SenderReport, NetError> {
    if cfg.batch_size == 0 || cfg.batch_size as usize > MAX_BATCH || cfg.window == 0 {
        return Err(NetError::Malformed("sender configuration"));
    }
    let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
    let mut report = SenderReport { batches: tags.len().div_ceil(cfg.batch_size as usize) as u64, ..SenderReport::default() };
    let mut plan = faults;
    loop {
        let attempt = connect(&addrs, cfg.connect_timeout).and_then(|stream| send_session(stream, tags, start_ms, cfg, plan, &mut report));
        match attempt {
            Ok(()) => return Ok(report),
            Err(e) if e.is_transient() && report.reconnects < cfg.max_reconnects => {
                report.reconnects += 1;
                plan = FaultPlan { cut_after_frames: None, seed: plan.seed.wrapping_add(1), ..plan };
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e),
        }
    }
}

fn connect(addrs: &[SocketAddr], timeout: Duration) -> Result<TcpStream, NetError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addrs) {
            Ok(s) => return Ok(s),
            Err(_) if Instant::now() < deadline => thread::sleep(Duration::from_millis(50)),
            Err(_) => return Err(NetError::Timeout),
        }
    }
}

fn send_session(
    stream: TcpStream,
    tags: &[TimeTag],
    start_ms: u64,
    cfg: &SenderConfig,
    plan: FaultPlan,
    report: &mut SenderReport,
) -> Result<(), NetError> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(cfg.idle_timeout))?;
    let closer = stream.try_clone()?;
    let mut reader = FrameReader::new(stream.try_clone()?);
    let mut sink = LossySink::new(FrameWriter::new(stream), plan);

    sink.send(&Frame::Hello(Hello { party: Party::Bob.id(), batch_size: cfg.batch_size, resume_from: 0 }))?;
    sink.send(&Frame::EpochSync { start_ms })?;
    let hello = expect_hello(reader.read_frame()?)?;
    let remote_ms = expect_epoch(reader.read_frame()?)?;
    if hello.batch_size != cfg.batch_size {
        return Err(NetError::BatchSizeMismatch { local: cfg.batch_size, remote: hello.batch_size });
    }
    report.epoch_s = agree_epoch(start_ms, remote_ms, cfg.epoch_tolerance_ms)?;

    let (tx, rx) = mpsc::channel();
    let listener = thread::spawn(move || loop {
        let r = reader.read_frame();
        let stop = !matches!(r, Ok(Some(_)));
        if tx.send(r).is_err() || stop {
            break;
        }
    });
    let result = stream_batches(&mut sink, &rx, tags, hello.resume_from, cfg, report);
    report.drops += sink.dropped();
    let _ = closer.shutdown(Shutdown::Both);
    let _ = listener.join();
    result
}

fn stream_batches(
    sink: &mut impl FrameSink,
    rx: &Receiver<Result<Option<Frame>, NetError>>,
    tags: &[TimeTag],
    resume_from: u64,
    cfg: &SenderConfig,
    report: &mut SenderReport,
) -> Result<(), NetError> {
    let bs = cfg.batch_size as usize;
    let total = report.batches;
    let batch = |seq: u64| &tags[seq as usize * bs..((seq as usize + 1) * bs).min(tags.len())];
    let mut base = resume_from.min(total);
    let mut next = base;
    let mut sent_upto = base;
    let mut timer = Instant::now();
    let mut progress = Instant::now();
    let recv = |timeout: Duration| -> Result<Option<Frame>, NetError> {
        match rx.recv_timeout(timeout) {
            Ok(Ok(Some(f))) => Ok(Some(f)),
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => Err(NetError::ConnectionClosed),
            Ok(Err(e)) => Err(e),
            Err(RecvTimeoutError::Timeout) => Ok(None),
        }
    };

    while base < total {
        while next < total && next < base + cfg.window {
            let retransmit = next < sent_upto;
            sink.send(&Frame::TagBatch { seq: next, retransmit, tags: batch(next).to_vec() })?;
            if retransmit {
                report.retransmissions += 1;
            }
            next += 1;
            sent_upto = sent_upto.max(next);
        }
        let wait = cfg.retransmit_timeout.saturating_sub(timer.elapsed());
        match recv(wait)? {
            Some(Frame::Ack { next: acked, gap }) => {
                if acked > base {
                    base = acked.min(total);
                    next = next.max(base);
                    timer = Instant::now();
                    progress = Instant::now();
                }
                if gap && acked == base {
                    next = base;
                }
            }
            Some(Frame::Stats(s)) => report.remote = Some(s),
            Some(f) => return Err(NetError::UnexpectedFrame(f.frame_type())),
            None => {
                if progress.elapsed() > cfg.idle_timeout {
                    return Err(NetError::Timeout);
                }
                next = base;
                timer = Instant::now();
            }
        }
    }
    report.tags_sent = tags.len() as u64;
    sink.send(&Frame::Stats(Stats {
        tags_sent: report.tags_sent,
        drops: report.drops,
        rate_millicps: 0,
        retransmissions: report.retransmissions,
    }))?;
    sink.send(&Frame::Bye)?;
    let deadline = Instant::now() + cfg.idle_timeout;
    loop {
        let left = deadline.saturating_duration_since(Instant::now());
        if left.is_zero() {
            return Err(NetError::Timeout);
        }
        match recv(left)? {
            Some(Frame::Stats(s)) => report.remote = Some(s),
            Some(Frame::Bye) => return Ok(()),
            Some(Frame::Ack { .. }) => {}
            Some(f) => return Err(NetError::UnexpectedFrame(f.frame_type())),
            None => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceiverConfig {
    pub batch_size: u32,
    pub epoch_tolerance_ms: u64,
    /// Give up after this long without a frame or a connection.
    pub idle_timeout: Duration,
    /// Batches buffered between ingestion and extraction.
    pub queue_depth: usize,
    /// Send STATS after this many accepted batches.
    pub stats_every: u64,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        Self { batch_size: 4096, epoch_tolerance_ms: 500, idle_timeout: Duration::from_secs(30), queue_depth: 64, stats_every: 16 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReceiverReport {
    pub epoch_s: u64,
    pub batches: u64,
    pub tags_received: u64,
    pub duplicates: u64,
    pub out_of_order: u64,
    pub connections: u32,
    /// Bob's closing STATS frame.
    pub remote: Option<Stats>,
    /// Rate reported in the final STATS frame, counts per second.
    pub final_rate_cps: f64,
}

struct Ingest<'a> {
    cfg: &'a ReceiverConfig,
    start_ms: u64,
    out: Option<SyncSender<Vec<TimeTag>>>,
    rate: &'a AtomicU64,
    final_rate: &'a Receiver<u64>,
    report: ReceiverReport,
    gap_flagged: Option<u64>,
}

enum Ended {
    Bye,
    Dropped,
}

impl Ingest<'_> {
    fn stats(&self, rate_millicps: u64) -> Stats {
        Stats {
            tags_sent: self.report.tags_received,
            drops: self.report.duplicates + self.report.out_of_order,
            rate_millicps,
            retransmissions: 0,
        }
    }

    fn connection(&mut self, stream: TcpStream) -> Result<Ended, NetError> {
        match self.exchange(stream) {
            Err(e) if e.is_transient() => Ok(Ended::Dropped),
            r => r,
        }
    }

    fn exchange(&mut self, stream: TcpStream) -> Result<Ended, NetError> {
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(self.cfg.idle_timeout))?;
        let mut reader = FrameReader::new(stream.try_clone()?);
        let mut sink = FrameWriter::new(stream);
        let hello = expect_hello(reader.read_frame()?)?;
        let remote_ms = expect_epoch(reader.read_frame()?)?;
        sink.send(&Frame::Hello(Hello { party: Party::Alice.id(), batch_size: self.cfg.batch_size, resume_from: self.report.batches }))?;
        sink.send(&Frame::EpochSync { start_ms: self.start_ms })?;
        if hello.batch_size != self.cfg.batch_size {
            return Err(NetError::BatchSizeMismatch { local: self.cfg.batch_size, remote: hello.batch_size });
        }
        self.report.epoch_s = agree_epoch(self.start_ms, remote_ms, self.cfg.epoch_tolerance_ms)?;
        self.gap_flagged = None;
        loop {
            let frame = match reader.read_frame() {
                Ok(Some(f)) => f,
                Ok(None) => return Ok(Ended::Dropped),
                Err(e) if e.is_transient() => return Ok(Ended::Dropped),
                Err(e) => return Err(e),
            };
            match frame {
                Frame::TagBatch { seq, tags, .. } => {
                    let expected = self.report.batches;
                    if seq == expected {
                        self.report.batches += 1;
                        self.report.tags_received += tags.len() as u64;
                        self.gap_flagged = None;
                        if let Some(out) = &self.out {
                            // blocks while extraction is behind
                            if out.send(tags).is_err() {
                                self.out = None;
                            }
                        }
                        sink.send(&Frame::Ack { next: self.report.batches, gap: false })?;
                        if self.report.batches.is_multiple_of(self.cfg.stats_every) {
                            sink.send(&Frame::Stats(self.stats(self.rate.load(Ordering::Relaxed))))?;
                        }
                    } else if seq > expected {
                        self.report.out_of_order += 1;
                        if self.gap_flagged != Some(expected) {
                            self.gap_flagged = Some(expected);
                            sink.send(&Frame::Ack { next: expected, gap: true })?;
                        }
                    } else {
                        self.report.duplicates += 1;
                        sink.send(&Frame::Ack { next: expected, gap: false })?;
                    }
                }
                Frame::Stats(s) => self.report.remote = Some(s),
                Frame::Bye => {
                    // let extraction finish so the closing rate is final
                    self.out = None;
                    let rate = self.final_rate.recv_timeout(self.cfg.idle_timeout).unwrap_or_else(|_| self.rate.load(Ordering::Relaxed));
                    self.report.final_rate_cps = rate as f64 / 1000.0;
                    sink.send(&Frame::Stats(self.stats(rate)))?;
                    sink.send(&Frame::Bye)?;
                    return Ok(Ended::Bye);
                }
                f => return Err(NetError::UnexpectedFrame(f.frame_type())),
            }
        }
    }
}

/// Accepts Bob's connections until he says BYE, forwarding accepted
/// batches in order to `out`. The live rate shown in periodic STATS is
/// read from `rate`; the closing STATS waits for one value on `final_rate`.
pub fn receive_tags(
    listener: &TcpListener,
    start_ms: u64,
    cfg: &ReceiverConfig,
    out: SyncSender<Vec<TimeTag>>,
    rate: &AtomicU64,
    final_rate: &Receiver<u64>,
) -> Result<ReceiverReport, NetError> {
    listener.set_nonblocking(true)?;
    let mut ingest =
        Ingest { cfg, start_ms, out: Some(out), rate, final_rate, report: ReceiverReport::default(), gap_flagged: None };
    let mut idle_since = Instant::now();
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                ingest.report.connections += 1;
                match ingest.connection(stream)? {
                    Ended::Bye => return Ok(ingest.report),
                    Ended::Dropped => idle_since = Instant::now(),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if idle_since.elapsed() > cfg.idle_timeout {
                    return Err(NetError::Timeout);
                }
                thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

#[derive(Debug)]
pub struct AliceOutcome {
    pub report: ReceiverReport,
    /// Online extraction result; failing synchronization is not a
    /// transport error.
    pub result: Result<OnlineResult, skylink_core::sync::SyncError>,
    pub history: Vec<PhaseChange>,
}

/// Alice's side: ingestion on one thread, coincidence extraction on the
/// calling thread, joined by a bounded queue.
pub fn run_receiver(
    listener: &TcpListener,
    alice: &[TimeTag],
    analysis: AnalysisConfig,
    cfg: &ReceiverConfig,
    start_ms: u64,
) -> Result<AliceOutcome, NetError> {
    let mut online = OnlineCoincidence::new(alice, analysis)?;
    let rate = AtomicU64::new(0);
    let (btx, brx) = mpsc::sync_channel::<Vec<TimeTag>>(cfg.queue_depth.max(1));
    let (ftx, frx) = mpsc::channel::<u64>();
    thread::scope(|s| {
        let live = &rate;
        let ingest = s.spawn(move || receive_tags(listener, start_ms, cfg, btx, live, &frx));
        let mut failure = None;
        for batch in brx {
            if failure.is_some() {
                continue;
            }
            if let Err(e) = online.push(&batch) {
                failure = Some(e);
            }
            rate.store((online.live_rate_cps() * 1000.0).round() as u64, Ordering::Relaxed);
        }
        let before_finish = online.history().to_vec();
        let result = match failure {
            Some(e) => Err(e),
            None => online.finish(),
        };
        let final_rate = match &result {
            Ok(r) if r.bob_span_s > 0.0 => (r.pairs.len() as f64 / r.bob_span_s * 1000.0).round() as u64,
            _ => 0,
        };
        let _ = ftx.send(final_rate);
        let mut history = vec![PhaseChange { phase: SessionPhase::Handshake, at_tag: 0, cause: None }];
        history.extend(result.as_ref().map_or(before_finish, |r| r.history.clone()));
        let report = ingest.join().expect("ingestion thread panicked")?;
        Ok(AliceOutcome { report, result, history })
    })
}
