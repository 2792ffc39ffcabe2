//! Coincidence extraction while Bob's tags are still arriving.
//!
//! Bob's tags are buffered until his acquisition window is complete, then
//! the offset search runs on exactly the tags the offline analysis would
//! use. From there the drift tracker is fed tag by tag. A tag is mapped to
//! Alice's timescale only once two knots exist and it lies before the
//! latest one: interpolation between fixed knots never changes afterwards,
//! so the released pairs equal the offline ones.

use std::fmt;

use skylink_core::analysis::{gate, AnalysisConfig, SyncedPairs};
use skylink_core::sync::{
    estimate_offset, ClockSolution, CoincidenceMatcher, CoincidencePair, OffsetEstimate, PulsePhase, SyncError, Tracker,
};
use skylink_core::timetag::{TimeTag, TICK_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    Handshake,
    /// Collecting Bob's acquisition window.
    Syncing,
    Locked,
    /// Lock lost or never found; pairs suspended until re-acquisition.
    Degraded,
}

impl fmt::Display for SessionPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionPhase::Handshake => "handshake",
            SessionPhase::Syncing => "syncing",
            SessionPhase::Locked => "locked",
            SessionPhase::Degraded => "degraded",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseChange {
    pub phase: SessionPhase,
    /// Bob tags received when the change happened.
    pub at_tag: usize,
    pub cause: Option<SyncError>,
}

/// One stretch of continuous lock.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncEpoch {
    pub first_bob_index: usize,
    pub offset: OffsetEstimate,
    pub clock: ClockSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineResult {
    pub epochs: Vec<SyncEpoch>,
    pub matched: Vec<CoincidencePair>,
    pub pairs: Vec<CoincidencePair>,
    pub phase: Option<PulsePhase>,
    pub history: Vec<PhaseChange>,
    /// Bob tags dropped while degraded.
    pub suspended_tags: usize,
    pub bob_tags: usize,
    /// Time between Bob's first and last tag.
    pub bob_span_s: f64,
    /// Bob's stream as received.
    pub bob: Vec<TimeTag>,
}

impl OnlineResult {
    /// The offline-shaped result; only defined for a single lock epoch.
    pub fn synced(&self) -> Option<SyncedPairs> {
        match self.epochs.as_slice() {
            [e] => Some(SyncedPairs {
                offset: e.offset,
                clock: e.clock.clone(),
                matched: self.matched.clone(),
                pairs: self.pairs.clone(),
                phase: self.phase,
            }),
            _ => None,
        }
    }
}

struct Lock<'a> {
    first_bob_index: usize,
    offset: OffsetEstimate,
    tracker: Tracker<'a>,
    matcher: CoincidenceMatcher<'a>,
    /// Solution over the knots fixed so far, once there are two.
    provisional: Option<ClockSolution>,
    knots_seen: usize,
}

pub struct OnlineCoincidence<'a> {
    alice: &'a [TimeTag],
    cfg: AnalysisConfig,
    bob: Vec<TimeTag>,
    phase: SessionPhase,
    history: Vec<PhaseChange>,
    /// Start of the current acquisition attempt.
    acq_start: usize,
    lock: Option<Lock<'a>>,
    /// Next Bob tag for the tracker, and for the matcher.
    tracked: usize,
    released: usize,
    epochs: Vec<SyncEpoch>,
    matched: Vec<CoincidencePair>,
    suspended: usize,
    last_error: Option<SyncError>,
}

impl<'a> OnlineCoincidence<'a> {
    pub fn new(alice: &'a [TimeTag], cfg: AnalysisConfig) -> Result<Self, SyncError> {
        cfg.validate()?;
        Ok(Self {
            alice,
            cfg,
            bob: Vec::new(),
            phase: SessionPhase::Syncing,
            history: vec![PhaseChange { phase: SessionPhase::Syncing, at_tag: 0, cause: None }],
            acq_start: 0,
            lock: None,
            tracked: 0,
            released: 0,
            epochs: Vec::new(),
            matched: Vec::new(),
            suspended: 0,
            last_error: None,
        })
    }

    pub fn phase(&self) -> SessionPhase {
        self.phase
    }

    pub fn history(&self) -> &[PhaseChange] {
        &self.history
    }

    pub fn received(&self) -> usize {
        self.bob.len()
    }

    /// Pairs released so far, before gating.
    pub fn matched(&self) -> &[CoincidencePair] {
        &self.matched
    }

    /// Released pairs per second of Bob time covered by released tags.
    pub fn live_rate_cps(&self) -> f64 {
        match (self.bob.first(), self.released.checked_sub(1).map(|i| self.bob[i])) {
            (Some(a), Some(b)) if b.ticks() > a.ticks() => self.matched.len() as f64 / (b.time_s() - a.time_s()),
            _ => 0.0,
        }
    }

    fn set_phase(&mut self, phase: SessionPhase, cause: Option<SyncError>) {
        if phase != self.phase {
            self.phase = phase;
            self.history.push(PhaseChange { phase, at_tag: self.bob.len(), cause });
        }
    }

    /// Adds a batch of Bob tags; they must continue his stream in order.
    pub fn push(&mut self, batch: &[TimeTag]) -> Result<(), SyncError> {
        if let (Some(last), Some(first)) = (self.bob.last(), batch.first()) {
            if first.ticks() < last.ticks() {
                return Err(SyncError::Unsorted);
            }
        }
        if batch.windows(2).any(|w| w[0].ticks() > w[1].ticks()) {
            return Err(SyncError::Unsorted);
        }
        self.bob.extend_from_slice(batch);
        self.advance(false);
        Ok(())
    }

    fn advance(&mut self, at_end: bool) {
        loop {
            if self.lock.is_none() && !self.try_acquire(at_end) {
                return;
            }
            if self.track(at_end) {
                return;
            }
        }
    }

    /// Runs the offset search once the acquisition window is complete.
    fn try_acquire(&mut self, at_end: bool) -> bool {
        let Some(&first) = self.bob.get(self.acq_start) else {
            return false;
        };
        let end = self.cfg.search.acquisition_end(first);
        let complete = self.bob.last().is_some_and(|t| t.ticks() >= end);
        if !complete && !at_end {
            return false;
        }
        match estimate_offset(self.alice, &self.bob[self.acq_start..], &self.cfg.search)
            .and_then(|offset| Ok((offset, Tracker::new(self.alice, offset, self.cfg.search, self.cfg.segment_s)?)))
        {
            Ok((offset, tracker)) => {
                self.suspended += self.acq_start - self.released;
                self.tracked = self.acq_start;
                self.released = self.acq_start;
                self.lock = Some(Lock {
                    first_bob_index: self.acq_start,
                    offset,
                    tracker,
                    matcher: CoincidenceMatcher::new(self.alice, self.cfg.window_s),
                    provisional: None,
                    knots_seen: 0,
                });
                self.set_phase(SessionPhase::Locked, None);
                true
            }
            Err(e) => {
                self.last_error = Some(e.clone());
                self.set_phase(SessionPhase::Degraded, Some(e));
                // retry on the next window
                let next = self.acq_start + self.bob[self.acq_start..].partition_point(|t| t.ticks() < end);
                if next == self.acq_start || next >= self.bob.len() {
                    self.acq_start = next.max(self.acq_start);
                    return false;
                }
                self.acq_start = next;
                self.try_acquire(at_end)
            }
        }
    }

    /// Feeds the tracker and releases final pairs. Returns false when lock
    /// was lost and acquisition should be retried.
    fn track(&mut self, at_end: bool) -> bool {
        let lock = self.lock.as_mut().expect("locked");
        let mut lost = None;
        while self.tracked < self.bob.len() {
            let tag = self.bob[self.tracked];
            if let Err(e) = lock.tracker.push(std::slice::from_ref(&tag)) {
                lost = Some(e);
                break;
            }
            self.tracked += 1;
            if lock.tracker.knots().len() >= 2 && lock.tracker.knots().len() != lock.knots_seen {
                lock.knots_seen = lock.tracker.knots().len();
                lock.provisional = Some(ClockSolution::from_knots(lock.tracker.knots().to_vec()).expect("tracker knots are ordered"));
                Self::release(lock, &self.bob, &mut self.released, self.tracked, &mut self.matched);
            }
        }
        if let Some(e) = lost {
            self.lose_lock(e);
            return false;
        }
        if at_end {
            let lock = self.lock.take().expect("locked");
            let Lock { first_bob_index, offset, tracker, mut matcher, .. } = lock;
            match tracker.finish() {
                Ok(clock) => {
                    for i in self.released..self.bob.len() {
                        matcher.push(i, self.bob[i], clock.to_alice_ticks(self.bob[i]));
                    }
                    self.released = self.bob.len();
                    self.matched.extend(matcher.finish());
                    self.epochs.push(SyncEpoch { first_bob_index, offset, clock });
                }
                Err(e) => {
                    self.last_error = Some(e.clone());
                    self.suspended += self.bob.len() - self.released;
                    self.released = self.bob.len();
                    self.set_phase(SessionPhase::Degraded, Some(e));
                }
            }
        }
        true
    }

    fn release(lock: &mut Lock<'a>, bob: &[TimeTag], released: &mut usize, upto: usize, out: &mut Vec<CoincidencePair>) {
        let clock = lock.provisional.as_ref().expect("two knots");
        let horizon = clock.knots().last().expect("knots").bob_time_s;
        while *released < upto && (bob[*released].ticks() as f64 * TICK_S) < horizon {
            let tag = bob[*released];
            lock.matcher.push(*released, tag, clock.to_alice_ticks(tag));
            *released += 1;
        }
        out.extend(lock.matcher.take_ready());
    }

    fn lose_lock(&mut self, e: SyncError) {
        let lock = self.lock.take().expect("locked");
        // pairs from closed clusters stay; the open cluster is suspended
        // with the rest of the unreleased tags
        drop(lock.matcher);
        self.last_error = Some(e.clone());
        self.acq_start = self.tracked;
        self.set_phase(SessionPhase::Degraded, Some(e));
    }

    /// Ends the stream: closes the last segment, releases every remaining
    /// tag and gates the pairs as the offline analysis does.
    pub fn finish(mut self) -> Result<OnlineResult, SyncError> {
        if self.bob.is_empty() {
            return Err(SyncError::EmptyStream);
        }
        self.advance(true);
        if self.epochs.is_empty() {
            return Err(self.last_error.unwrap_or(SyncError::EmptyStream));
        }
        self.suspended += self.bob.len() - self.released;
        let (pairs, phase) = gate(&self.matched, &self.cfg)?;
        Ok(OnlineResult {
            epochs: self.epochs,
            matched: self.matched,
            pairs,
            phase,
            history: self.history,
            suspended_tags: self.suspended,
            bob_tags: self.bob.len(),
            bob_span_s: self.bob[self.bob.len() - 1].time_s() - self.bob[0].time_s(),
            bob: self.bob,
        })
    }
}
