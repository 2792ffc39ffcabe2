use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::tracker::ClockSolution;
use crate::timetag::{TimeTag, TICK_S};

/// Preset coincidence windows.
pub const WINDOW_NARROW_S: f64 = 0.8e-9;
pub const WINDOW_WIDE_S: f64 = 1.0e-9;

/// An Alice tag matched to a Bob tag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidencePair {
    pub alice: TimeTag,
    pub bob: TimeTag,
    /// Bob's clock-corrected time minus Alice's.
    pub residual_s: f64,
    pub alice_index: usize,
    pub bob_index: usize,
}

#[derive(Debug, Clone, Copy)]
struct Edge {
    /// Residual in ticks.
    res: f64,
    early: f64,
    late: f64,
    a: usize,
    b: usize,
}

/// Nearest residual first; ties go to the pair whose earlier tag is
/// earlier, then to lower indices.
fn edge_order(x: &Edge, y: &Edge) -> Ordering {
    x.res
        .abs()
        .total_cmp(&y.res.abs())
        .then(x.early.total_cmp(&y.early))
        .then(x.late.total_cmp(&y.late))
        .then(x.a.cmp(&y.a))
        .then(x.b.cmp(&y.b))
}

fn edge(ta: TimeTag, tb_corrected: f64, a: usize, b: usize) -> Edge {
    let t = ta.ticks() as f64;
    Edge { res: tb_corrected - t, early: t.min(tb_corrected), late: t.max(tb_corrected), a, b }
}

/// Greedy selection on edges sorted by `edge_order`; each tag used once.
fn select(edges: &mut [Edge], alice: &[TimeTag], bob_of: impl Fn(usize) -> TimeTag, out: &mut Vec<CoincidencePair>) {
    edges.sort_unstable_by(edge_order);
    let mut used_a: Vec<usize> = Vec::new();
    let mut used_b: Vec<usize> = Vec::new();
    let start = out.len();
    for e in edges.iter() {
        if used_a.contains(&e.a) || used_b.contains(&e.b) {
            continue;
        }
        used_a.push(e.a);
        used_b.push(e.b);
        out.push(CoincidencePair {
            alice: alice[e.a],
            bob: bob_of(e.b),
            residual_s: e.res * TICK_S,
            alice_index: e.a,
            bob_index: e.b,
        });
    }
    out[start..].sort_unstable_by_key(|p| p.alice_index);
}

/// Streaming one-to-one coincidence matcher. Bob tags arrive in order with
/// their clock-corrected times; candidate pairs within half a window form
/// clusters that cannot interact with later tags once Alice's candidate
/// range has moved past them. Each closed cluster is resolved greedily by
/// nearest residual, which equals a global greedy over all candidate pairs.
#[derive(Debug)]
pub struct CoincidenceMatcher<'a> {
    alice: &'a [TimeTag],
    half_window_ticks: f64,
    cursor: usize,
    cluster: Vec<Edge>,
    cluster_bobs: Vec<(usize, TimeTag)>,
    cluster_max_a: usize,
    ready: Vec<CoincidencePair>,
    last_corrected: f64,
}

impl<'a> CoincidenceMatcher<'a> {
    pub fn new(alice: &'a [TimeTag], window_s: f64) -> Self {
        Self {
            alice,
            half_window_ticks: window_s / 2.0 / TICK_S,
            cursor: 0,
            cluster: Vec::new(),
            cluster_bobs: Vec::new(),
            cluster_max_a: 0,
            ready: Vec::new(),
            last_corrected: f64::NEG_INFINITY,
        }
    }

    /// `corrected` is the Bob tag on Alice's timescale in ticks; successive
    /// calls must not decrease it.
    pub fn push(&mut self, bob_index: usize, bob: TimeTag, corrected: f64) {
        debug_assert!(corrected >= self.last_corrected);
        self.last_corrected = corrected;
        let lo = corrected - self.half_window_ticks;
        while self.cursor < self.alice.len() && (self.alice[self.cursor].ticks() as f64) < lo {
            self.cursor += 1;
        }
        let mut i = self.cursor;
        let first_edge = self.cluster.len();
        while i < self.alice.len() {
            let e = edge(self.alice[i], corrected, i, bob_index);
            if e.res < -self.half_window_ticks {
                break;
            }
            if e.res.abs() <= self.half_window_ticks {
                self.cluster.push(e);
            }
            i += 1;
        }
        if self.cluster.len() == first_edge {
            return;
        }
        let min_a = self.cluster[first_edge].a;
        if first_edge > 0 && min_a > self.cluster_max_a {
            let new: Vec<Edge> = self.cluster.drain(first_edge..).collect();
            self.flush();
            self.cluster = new;
        }
        self.cluster_bobs.push((bob_index, bob));
        self.cluster_max_a = self.cluster.iter().map(|e| e.a).max().unwrap_or(0);
    }

    fn flush(&mut self) {
        if self.cluster.is_empty() {
            return;
        }
        let bobs = std::mem::take(&mut self.cluster_bobs);
        let mut edges = std::mem::take(&mut self.cluster);
        select(&mut edges, self.alice, |b| bobs.iter().find(|x| x.0 == b).expect("bob in cluster").1, &mut self.ready);
    }

    /// Pairs from clusters that can no longer change, in Alice order.
    pub fn take_ready(&mut self) -> Vec<CoincidencePair> {
        std::mem::take(&mut self.ready)
    }

    pub fn finish(mut self) -> Vec<CoincidencePair> {
        self.flush();
        self.ready
    }
}

/// One-to-one coincidences between Alice's tags and Bob's tags mapped onto
/// Alice's timescale. Nearest residual wins; ties go to the earlier tag.
/// Output is sorted by Alice index.
pub fn find_coincidences(a: &[TimeTag], b: &[TimeTag], clock: &ClockSolution, window_s: f64) -> Vec<CoincidencePair> {
    let mut m = CoincidenceMatcher::new(a, window_s);
    for (i, &tag) in b.iter().enumerate() {
        m.push(i, tag, clock.to_alice_ticks(tag));
    }
    m.finish()
}

/// Quadratic reference matcher: every candidate pair, one global greedy pass.
pub fn brute_force_coincidences(a: &[TimeTag], b: &[TimeTag], clock: &ClockSolution, window_s: f64) -> Vec<CoincidencePair> {
    let half = window_s / 2.0 / TICK_S;
    let mut edges = Vec::new();
    for (j, &tb) in b.iter().enumerate() {
        let c = clock.to_alice_ticks(tb);
        for (i, &ta) in a.iter().enumerate() {
            let e = edge(ta, c, i, j);
            if e.res.abs() <= half {
                edges.push(e);
            }
        }
    }
    let mut out = Vec::new();
    select(&mut edges, a, |j| b[j], &mut out);
    out
}
