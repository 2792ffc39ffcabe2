use serde::{Deserialize, Serialize};

use super::correlate::{refine, search, to_ticks, OffsetEstimate, OffsetSearch};
use super::SyncError;
use crate::timetag::{TimeTag, TICK_S};

/// Offset measured around a given Bob local time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub bob_time_s: f64,
    pub offset_s: f64,
}

/// One linear piece of the clock map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSegment {
    pub t_start_s: f64,
    pub offset_s: f64,
    pub drift: f64,
}

/// Piecewise-linear map from Bob's local time to Alice's:
/// `alice = bob - offset(bob)`, with `offset` interpolated between knots and
/// extrapolated with the end slopes. Continuous by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSolution {
    knots: Vec<Knot>,
}

impl ClockSolution {
    pub fn constant(offset_s: f64) -> Self {
        Self { knots: vec![Knot { bob_time_s: 0.0, offset_s }] }
    }

    /// Knots must be strictly increasing in time; at least one is needed.
    pub fn from_knots(knots: Vec<Knot>) -> Result<Self, SyncError> {
        let sorted = knots.windows(2).all(|w| w[0].bob_time_s < w[1].bob_time_s);
        if knots.is_empty() || !sorted || knots.iter().any(|k| !k.offset_s.is_finite() || !k.bob_time_s.is_finite()) {
            return Err(SyncError::InvalidParameter("clock knots"));
        }
        Ok(Self { knots })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Offset at Bob local time `t`, seconds.
    pub fn offset_at(&self, t: f64) -> f64 {
        let k = &self.knots;
        if k.len() == 1 {
            return k[0].offset_s;
        }
        let i = k.partition_point(|x| x.bob_time_s <= t).clamp(1, k.len() - 1);
        let (p, q) = (k[i - 1], k[i]);
        p.offset_s + (q.offset_s - p.offset_s) * (t - p.bob_time_s) / (q.bob_time_s - p.bob_time_s)
    }

    /// Bob's tag on Alice's timescale, in (fractional) ticks.
    pub fn to_alice_ticks(&self, tag: TimeTag) -> f64 {
        let t = tag.ticks() as f64;
        t - self.offset_at(t * TICK_S) / TICK_S
    }

    /// Least-squares slope of offset against Bob time over all knots: the
    /// fractional frequency offset of Bob's clock relative to Alice's.
    pub fn drift(&self) -> f64 {
        let n = self.knots.len() as f64;
        if self.knots.len() < 2 {
            return 0.0;
        }
        let mt = self.knots.iter().map(|k| k.bob_time_s).sum::<f64>() / n;
        let mo = self.knots.iter().map(|k| k.offset_s).sum::<f64>() / n;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for k in &self.knots {
            sxy += (k.bob_time_s - mt) * (k.offset_s - mo);
            sxx += (k.bob_time_s - mt).powi(2);
        }
        sxy / sxx
    }

    pub fn segments(&self) -> Vec<ClockSegment> {
        if self.knots.len() == 1 {
            return vec![ClockSegment { t_start_s: f64::NEG_INFINITY, offset_s: self.knots[0].offset_s, drift: 0.0 }];
        }
        self.knots
            .windows(2)
            .enumerate()
            .map(|(i, w)| ClockSegment {
                t_start_s: if i == 0 { f64::NEG_INFINITY } else { w[0].bob_time_s },
                offset_s: w[0].offset_s,
                drift: (w[1].offset_s - w[0].offset_s) / (w[1].bob_time_s - w[0].bob_time_s),
            })
            .collect()
    }
}

/// Incremental drift tracker. Bob's tags are fed in order and cut into
/// fixed segments of his local time; each completed segment is searched
/// near the offset predicted from earlier segments (falling back to a full
/// search) and contributes one knot. Alice's stream must be complete.
///
/// Feeding everything at once or in arbitrary batches gives the same knots.
#[derive(Debug)]
pub struct Tracker<'a> {
    alice: &'a [TimeTag],
    search: OffsetSearch,
    segment_ticks: u64,
    initial: OffsetEstimate,
    knots: Vec<Knot>,
    segment: Option<u64>,
    bob: Vec<TimeTag>,
    last: Option<TimeTag>,
}

impl<'a> Tracker<'a> {
    pub fn new(alice: &'a [TimeTag], initial: OffsetEstimate, search: OffsetSearch, segment_s: f64) -> Result<Self, SyncError> {
        search.validate()?;
        if !(segment_s > 0.0 && segment_s.is_finite()) {
            return Err(SyncError::InvalidParameter("segment length"));
        }
        Ok(Self {
            alice,
            search,
            segment_ticks: to_ticks(segment_s).max(1) as u64,
            initial,
            knots: Vec::new(),
            segment: None,
            bob: Vec::new(),
            last: None,
        })
    }

    pub fn knots(&self) -> &[Knot] {
        &self.knots
    }

    /// Adds Bob tags (in stream order). Returns how many new knots were
    /// fixed; fails if a completed segment shows no significant peak.
    pub fn push(&mut self, tags: &[TimeTag]) -> Result<usize, SyncError> {
        let before = self.knots.len();
        for &tag in tags {
            if self.last.is_some_and(|l| l.ticks() > tag.ticks()) {
                return Err(SyncError::Unsorted);
            }
            self.last = Some(tag);
            let seg = tag.ticks() / self.segment_ticks;
            match self.segment {
                Some(cur) if seg != cur => {
                    self.close(cur, false)?;
                    // a whole empty segment cannot be locked
                    if seg > cur + 1 {
                        return Err(SyncError::LockLost { segment: cur + 1, confidence: 0.0 });
                    }
                }
                _ => {}
            }
            self.segment = Some(seg);
            self.bob.push(tag);
        }
        Ok(self.knots.len() - before)
    }

    fn predicted(&self, t: f64) -> f64 {
        match self.knots.len() {
            0 => self.initial.offset_s,
            1 => self.knots[0].offset_s,
            n => {
                let (p, q) = (self.knots[n - 2], self.knots[n - 1]);
                q.offset_s + (q.offset_s - p.offset_s) * (t - q.bob_time_s) / (q.bob_time_s - p.bob_time_s)
            }
        }
    }

    fn close(&mut self, segment: u64, trailing: bool) -> Result<(), SyncError> {
        let bob = std::mem::take(&mut self.bob);
        if bob.is_empty() {
            return Ok(());
        }
        let t_mean = bob.iter().map(|t| t.ticks() as f64).sum::<f64>() / bob.len() as f64 * TICK_S;
        let pred = to_ticks(self.predicted(t_mean));
        let window_positions = 2.0 * self.search.fine_half_width_s / self.search.peak_width_s;
        let mut est = refine(self.alice, &bob, pred, to_ticks(self.search.fine_half_width_s), &self.search, window_positions);
        if est.is_none_or(|e| e.confidence < self.search.threshold) {
            est = search(self.alice, &bob, &self.search).or(est);
        }
        match est {
            Some(e) if e.confidence >= self.search.threshold => {
                self.knots.push(Knot { bob_time_s: t_mean, offset_s: e.offset_s });
                Ok(())
            }
            _ if trailing => Ok(()),
            e => Err(SyncError::LockLost { segment, confidence: e.map_or(0.0, |e| e.confidence) }),
        }
    }

    /// Closes the final (possibly partial) segment; if it fails it is
    /// dropped rather than reported. Without any knot the initial estimate
    /// stands as a constant offset.
    pub fn finish(mut self) -> Result<ClockSolution, SyncError> {
        if let Some(cur) = self.segment {
            self.close(cur, true)?;
        }
        if self.knots.is_empty() {
            return Ok(ClockSolution::constant(self.initial.offset_s));
        }
        ClockSolution::from_knots(self.knots)
    }
}

/// Re-estimates the offset in consecutive segments of Bob's local time and
/// joins the results into a piecewise-linear clock map.
pub fn track_drift(
    a: &[TimeTag],
    b: &[TimeTag],
    initial: &OffsetEstimate,
    search: &OffsetSearch,
    segment_s: f64,
) -> Result<ClockSolution, SyncError> {
    let mut tracker = Tracker::new(a, *initial, *search, segment_s)?;
    tracker.push(b)?;
    tracker.finish()
}
