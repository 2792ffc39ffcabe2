use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::tracker::ClockSolution;
use super::SyncError;
use crate::timetag::{TimeTag, TICK_S};

/// Counts of all Alice/Bob tag pairs by corrected residual over
/// `[-span/2, span/2)`. Pairs are not matched one-to-one here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    pub bin_width_s: f64,
    /// Residual at the lower edge of bin 0.
    pub start_s: f64,
    pub bins: Vec<u64>,
}

impl CoincidenceHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        self.start_s + (i as f64 + 0.5) * self.bin_width_s
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_center_s,count\n");
        for (i, c) in self.bins.iter().enumerate() {
            writeln!(s, "{:.6e},{}", self.bin_center(i), c).unwrap();
        }
        s
    }

    /// Sum of counts whose bin centers fall in `[lo, hi)`.
    pub fn sum_between(&self, lo: f64, hi: f64) -> u64 {
        (0..self.bins.len()).filter(|&i| (lo..hi).contains(&self.bin_center(i))).map(|i| self.bins[i]).sum()
    }

    /// Count-weighted mean residual in `[lo, hi)` after removing a flat
    /// `floor` per bin.
    pub fn centroid_between(&self, lo: f64, hi: f64, floor: f64) -> Option<f64> {
        let (mut w, mut m) = (0.0, 0.0);
        for i in 0..self.bins.len() {
            let c = self.bin_center(i);
            if (lo..hi).contains(&c) {
                let x = (self.bins[i] as f64 - floor).max(0.0);
                w += x;
                m += x * c;
            }
        }
        (w > 0.0).then(|| m / w)
    }
}

pub fn coincidence_histogram(
    a: &[TimeTag],
    b: &[TimeTag],
    clock: &ClockSolution,
    span_s: f64,
    bin_s: f64,
) -> Result<CoincidenceHistogram, SyncError> {
    if !(bin_s >= TICK_S * 0.999 && span_s >= bin_s && span_s.is_finite()) {
        return Err(SyncError::InvalidParameter("histogram bin/span"));
    }
    let nbins = (span_s / bin_s).round() as usize;
    let start = -(nbins as f64) * bin_s / 2.0;
    let (lo_t, bin_t) = (start / TICK_S, bin_s / TICK_S);
    let hi_t = -lo_t;
    let mut bins = vec![0u64; nbins];
    let mut cursor = 0usize;
    for &tb in b {
        let c = clock.to_alice_ticks(tb);
        while cursor < a.len() && c - (a[cursor].ticks() as f64) >= hi_t {
            cursor += 1;
        }
        for ta in &a[cursor..] {
            let res = c - ta.ticks() as f64;
            if res < lo_t {
                break;
            }
            if res < hi_t {
                let i = (((res - lo_t) / bin_t) as usize).min(nbins - 1);
                bins[i] += 1;
            }
        }
    }
    Ok(CoincidenceHistogram { bin_width_s: bin_s, start_s: start, bins })
}

/// Positions and heights of the central and side peaks of a pulsed-source
/// coincidence histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakComb {
    /// Centroid of each peak, ordered by residual; index `central` is the
    /// peak nearest zero.
    pub positions_s: Vec<f64>,
    /// Counts above the flat floor within each peak region.
    pub heights: Vec<f64>,
    pub central: usize,
    /// Least-squares spacing of the peak positions.
    pub spacing_s: f64,
    /// Mean side-peak height over central-peak height.
    pub side_to_central: f64,
}

/// Measures peaks expected every `period_s` (e.g. the pump period) using
/// regions of `±half_width_s` around each nominal position. The flat floor
/// is taken from the bins outside every peak region.
pub fn analyze_peak_comb(h: &CoincidenceHistogram, period_s: f64, half_width_s: f64) -> Option<PeakComb> {
    let lo = h.start_s;
    let hi = h.start_s + h.bins.len() as f64 * h.bin_width_s;
    let kmin = ((lo + half_width_s) / period_s).ceil() as i64;
    let kmax = ((hi - half_width_s) / period_s).floor() as i64;
    if kmax - kmin < 2 {
        return None;
    }
    // floor from gaps between peaks
    let (mut gap_counts, mut gap_bins) = (0u64, 0usize);
    for i in 0..h.bins.len() {
        let c = h.bin_center(i);
        let phase = (c / period_s - (c / period_s).round()).abs() * period_s;
        if phase > half_width_s {
            gap_counts += h.bins[i];
            gap_bins += 1;
        }
    }
    let floor = if gap_bins > 0 { gap_counts as f64 / gap_bins as f64 } else { 0.0 };
    let mut positions = Vec::new();
    let mut heights = Vec::new();
    for k in kmin..=kmax {
        let nominal = k as f64 * period_s;
        let (a, b) = (nominal - half_width_s, nominal + half_width_s);
        let n = (0..h.bins.len()).filter(|&i| (a..b).contains(&h.bin_center(i))).count();
        let height = h.sum_between(a, b) as f64 - floor * n as f64;
        positions.push(h.centroid_between(a, b, floor).unwrap_or(nominal));
        heights.push(height);
    }
    let central = (0..positions.len()).min_by(|&i, &j| positions[i].abs().total_cmp(&positions[j].abs()))?;
    let ks: Vec<f64> = (kmin..=kmax).map(|k| k as f64).collect();
    let n = ks.len() as f64;
    let mk = ks.iter().sum::<f64>() / n;
    let mp = positions.iter().sum::<f64>() / n;
    let sxy: f64 = ks.iter().zip(&positions).map(|(k, p)| (k - mk) * (p - mp)).sum();
    let sxx: f64 = ks.iter().map(|k| (k - mk).powi(2)).sum();
    let sides: Vec<f64> = heights.iter().enumerate().filter(|&(i, _)| i != central).map(|(_, &h)| h).collect();
    let side_mean = sides.iter().sum::<f64>() / sides.len() as f64;
    Some(PeakComb {
        spacing_s: sxy / sxx,
        side_to_central: side_mean / heights[central],
        positions_s: positions,
        heights,
        central,
    })
}
