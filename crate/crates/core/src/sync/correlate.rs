use serde::{Deserialize, Serialize};

use super::SyncError;
use crate::timetag::{TimeTag, TICK_S};

/// Parameters of the cross-correlation offset search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OffsetSearch {
    /// Width of the offset range searched in the coarse stage.
    pub search_span_s: f64,
    /// Middle of the searched offset range.
    pub span_center_s: f64,
    pub coarse_bin_s: f64,
    /// Half-width of the 1-tick refinement window around a coarse peak.
    pub fine_half_width_s: f64,
    /// Narrowest peak region tried; wider regions (x2, x4, ...) catch peaks
    /// smeared by drift.
    pub peak_width_s: f64,
    /// Only Bob tags this long after his first tag take part in acquisition.
    pub acquisition_s: f64,
    pub threshold: f64,
}

impl Default for OffsetSearch {
    fn default() -> Self {
        Self {
            search_span_s: 2e-3,
            span_center_s: 0.0,
            coarse_bin_s: 1e-9,
            fine_half_width_s: 50e-9,
            peak_width_s: 2e-9,
            acquisition_s: 10.0,
            threshold: 5.0,
        }
    }
}

impl OffsetSearch {
    pub fn validate(&self) -> Result<(), SyncError> {
        let ok = self.search_span_s > 0.0
            && self.coarse_bin_s >= TICK_S * 0.999
            && self.coarse_bin_s < self.search_span_s
            && self.fine_half_width_s > 0.0
            && self.peak_width_s >= TICK_S * 0.999
            && self.acquisition_s > 0.0
            && self.threshold > 0.0
            && self.span_center_s.is_finite();
        if ok {
            Ok(())
        } else {
            Err(SyncError::InvalidParameter("offset search"))
        }
    }

    /// First tick past the acquisition window opened by Bob's first tag.
    pub fn acquisition_end(&self, first: TimeTag) -> u64 {
        first.ticks().saturating_add(to_ticks(self.acquisition_s) as u64)
    }
}

/// Result of a cross-correlation peak search. `offset_s` is Bob's local
/// time minus Alice's for the same photon pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffsetEstimate {
    pub offset_s: f64,
    /// Tag pairs inside the peak region.
    pub peak_height: u64,
    /// Expected background pairs in the same region.
    pub background_level: f64,
    /// Peak excess over background, in units of the largest excess that
    /// background alone plausibly reaches anywhere in the search range.
    /// Pure background scores about 1.
    pub confidence: f64,
    /// Bob local time the estimate refers to (middle of the data used).
    pub reference_time_s: f64,
}

pub(crate) fn to_ticks(s: f64) -> i64 {
    (s / TICK_S).round() as i64
}

/// Counts tag pairs by `tb - ta` over `[lo, hi)` ticks in bins of `bin` ticks.
pub(crate) fn correlate(a: &[TimeTag], b: &[TimeTag], lo: i64, hi: i64, bin: i64) -> Vec<u32> {
    let nbins = ((hi - lo) + bin - 1) / bin;
    let mut h = vec![0u32; nbins.max(0) as usize];
    let (mut start, mut end) = (0usize, 0usize);
    for tb in b.iter().map(|t| t.ticks() as i64) {
        // alice ticks in (tb - hi, tb - lo]
        while start < a.len() && (a[start].ticks() as i64) <= tb - hi {
            start += 1;
        }
        end = end.max(start);
        while end < a.len() && (a[end].ticks() as i64) <= tb - lo {
            end += 1;
        }
        for ta in &a[start..end] {
            let d = tb - ta.ticks() as i64;
            h[((d - lo) / bin) as usize] += 1;
        }
    }
    h
}

struct Peak {
    counts: u64,
    background: f64,
    confidence: f64,
    /// Background-subtracted centroid in bins from histogram origin.
    centroid: f64,
}

/// Best region among widths `base, 2*base, ...` up to `max_width` bins.
/// `positions` is the number of independent places a region of width
/// `base` could have landed in the whole search.
fn find_peak(h: &[u32], base: usize, max_width: usize, positions: f64) -> Option<Peak> {
    let total: u64 = h.iter().map(|&c| c as u64).sum();
    let mut prefix = Vec::with_capacity(h.len() + 1);
    prefix.push(0u64);
    for &c in h {
        prefix.push(prefix.last().unwrap() + c as u64);
    }
    let mut best: Option<Peak> = None;
    let mut width = base.max(1);
    while width <= max_width.min(h.len()) {
        let (mut first, mut counts) = (0usize, 0u64);
        for i in 0..=h.len() - width {
            let s = prefix[i + width] - prefix[i];
            if s > counts {
                counts = s;
                first = i;
            }
        }
        let rest = h.len() - width;
        let per_bin = if rest > 0 { (total - counts) as f64 / rest as f64 } else { 0.0 };
        let background = per_bin * width as f64;
        let l = (positions * base as f64 / width as f64).max(2.0).ln();
        let confidence = (counts as f64 - background) / ((2.0 * background * l).sqrt() + l);
        if best.as_ref().is_none_or(|b| confidence > b.confidence) {
            let (mut wsum, mut csum) = (0.0, 0.0);
            for (i, &c) in h[first..first + width].iter().enumerate() {
                let x = (c as f64 - per_bin).max(0.0);
                wsum += x;
                csum += x * (first + i) as f64;
            }
            let centroid = if wsum > 0.0 { csum / wsum } else { first as f64 + (width as f64 - 1.0) / 2.0 };
            best = Some(Peak { counts, background, confidence, centroid });
        }
        width *= 2;
    }
    best
}

/// Coarse stage: index of the 3-bin window with the most counts.
fn coarse_peak(a: &[TimeTag], b: &[TimeTag], lo: i64, hi: i64, bin: i64) -> Option<i64> {
    let h = correlate(a, b, lo, hi, bin);
    if h.len() < 3 {
        return h.iter().enumerate().max_by_key(|(_, &c)| c).map(|(i, _)| lo + i as i64 * bin + bin / 2);
    }
    let mut best = (0u64, 0usize);
    for i in 0..h.len() - 2 {
        let s = h[i] as u64 + h[i + 1] as u64 + h[i + 2] as u64;
        if s > best.0 {
            best = (s, i);
        }
    }
    (best.0 > 0).then(|| lo + (best.1 as i64 + 1) * bin + bin / 2)
}

/// Fine stage around `center` ticks with 1-tick bins. `positions` is the
/// look-elsewhere count of narrowest regions across the whole search.
pub(crate) fn refine(
    a: &[TimeTag],
    b: &[TimeTag],
    center: i64,
    half_width: i64,
    cfg: &OffsetSearch,
    positions: f64,
) -> Option<OffsetEstimate> {
    let lo = center - half_width;
    let hi = center + half_width + 1;
    let h = correlate(a, b, lo, hi, 1);
    let base = to_ticks(cfg.peak_width_s).max(1) as usize;
    let peak = find_peak(&h, base, h.len() / 2, positions)?;
    let reference = match (b.first(), b.last()) {
        (Some(f), Some(l)) => (f.time_s() + l.time_s()) / 2.0,
        _ => 0.0,
    };
    Some(OffsetEstimate {
        offset_s: (lo as f64 + peak.centroid) * TICK_S,
        peak_height: peak.counts,
        background_level: peak.background,
        confidence: peak.confidence,
        reference_time_s: reference,
    })
}

/// Full two-stage search of Bob's tags `b` against Alice's `a`.
pub(crate) fn search(a: &[TimeTag], b: &[TimeTag], cfg: &OffsetSearch) -> Option<OffsetEstimate> {
    let half = to_ticks(cfg.search_span_s / 2.0);
    let center = to_ticks(cfg.span_center_s);
    let bin = to_ticks(cfg.coarse_bin_s).max(1);
    let coarse = coarse_peak(a, b, center - half, center + half, bin)?;
    let positions = cfg.search_span_s / cfg.peak_width_s;
    refine(a, b, coarse, to_ticks(cfg.fine_half_width_s) + 2 * bin, cfg, positions)
}

/// Finds Bob's clock offset relative to Alice by maximizing the
/// cross-correlation of the two tag streams: a coarse binned search over
/// the whole span, then 1-tick refinement around the best coarse bin.
pub fn estimate_offset(a: &[TimeTag], b: &[TimeTag], cfg: &OffsetSearch) -> Result<OffsetEstimate, SyncError> {
    cfg.validate()?;
    if a.is_empty() || b.is_empty() {
        return Err(SyncError::EmptyStream);
    }
    let end = cfg.acquisition_end(b[0]);
    let n = b.partition_point(|t| t.ticks() < end);
    let est = search(a, &b[..n], cfg).ok_or(SyncError::NoSignificantPeak { confidence: 0.0 })?;
    if est.confidence < cfg.threshold {
        return Err(SyncError::NoSignificantPeak { confidence: est.confidence });
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tags(mut ticks: Vec<u64>) -> Vec<TimeTag> {
        ticks.sort_unstable();
        ticks.dedup();
        ticks.into_iter().map(|t| TimeTag::from_parts(0, t).unwrap()).collect()
    }

    #[test]
    fn correlate_counts_every_pair_in_range() {
        let a = tags(vec![10, 20, 30]);
        let b = tags(vec![15, 25]);
        let h = correlate(&a, &b, -20, 20, 5);
        // differences: 5, -5, -15, 15, 5, -5
        assert_eq!(h.iter().sum::<u32>(), 6);
        assert_eq!(h[5], 2);
        assert_eq!(h[3], 2);
    }

    #[test]
    fn identical_streams_have_zero_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = tags((0..5000).map(|_| rng.random_range(0..6_400_000_000u64)).collect());
        let est = estimate_offset(&a, &a, &OffsetSearch::default()).unwrap();
        assert!(est.offset_s.abs() <= TICK_S, "{est:?}");
        assert!(est.confidence > 5.0);
    }

    #[test]
    fn pure_background_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let span = 6_400_000_000u64; // 1 s
        let a = tags((0..100_000).map(|_| rng.random_range(0..span)).collect());
        let b = tags((0..2000).map(|_| rng.random_range(0..span)).collect());
        match estimate_offset(&a, &b, &OffsetSearch::default()) {
            Err(SyncError::NoSignificantPeak { confidence }) => assert!(confidence < 2.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_stream_is_an_error() {
        let a = tags(vec![1, 2, 3]);
        assert!(matches!(estimate_offset(&a, &[], &OffsetSearch::default()), Err(SyncError::EmptyStream)));
    }
}
