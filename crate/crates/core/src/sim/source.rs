use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use super::config::{AnalyzerSettings, SourceConfig};
use super::SimError;
use crate::physics::{Basis, Outcome, PolarizationChannel, SingletModel};

/// One pair leaving the crystal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairEmission {
    pub pulse_index: u64,
    pub time_s: f64,
}

/// Number of pump pulses whose time `n / rep_rate` falls in `[0, duration)`.
pub fn pulse_count(rep_rate_hz: f64, duration_s: f64) -> u64 {
    if duration_s <= 0.0 {
        return 0;
    }
    let mut n = (duration_s * rep_rate_hz).ceil() as u64;
    while n > 0 && (n - 1) as f64 / rep_rate_hz >= duration_s {
        n -= 1;
    }
    while (n as f64) / rep_rate_hz < duration_s {
        n += 1;
    }
    n
}

/// Walks the pulse train, jumping straight to pulses that carry at least
/// one pair. Pair numbers per pulse are Poisson with the given mean.
#[derive(Debug, Clone)]
pub struct EmissionSampler {
    rep_rate_hz: f64,
    mean: f64,
    gap: Option<Geometric>,
    next: u64,
    end: u64,
}

impl EmissionSampler {
    pub fn new(rep_rate_hz: f64, mean_pairs_per_pulse: f64, duration_s: f64) -> Self {
        let p_nonzero = -(-mean_pairs_per_pulse).exp_m1();
        let gap = (p_nonzero > 0.0).then(|| Geometric::new(p_nonzero).expect("probability in (0, 1]"));
        Self { rep_rate_hz, mean: mean_pairs_per_pulse, gap, next: 0, end: pulse_count(rep_rate_hz, duration_s) }
    }

    pub fn pulse_time(&self, pulse_index: u64) -> f64 {
        pulse_index as f64 / self.rep_rate_hz
    }

    /// Next occupied pulse and its pair count (≥ 1).
    pub fn next_pulse<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Option<(u64, u32)> {
        let gap = self.gap.as_ref()?;
        let idx = self.next.checked_add(gap.sample(rng))?;
        if idx >= self.end {
            self.next = self.end;
            return None;
        }
        self.next = idx + 1;
        Some((idx, zero_truncated_poisson(self.mean, rng)))
    }
}

fn zero_truncated_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    let mut u = rng.random::<f64>() * -(-mean).exp_m1();
    let mut p = (-mean).exp() * mean;
    let mut k = 1u32;
    while u >= p && k < 64 {
        u -= p;
        k += 1;
        p *= mean / k as f64;
    }
    k
}

/// Pair emissions over `[0, duration)`. Times sit exactly on the pulse grid;
/// a pulse carrying several pairs appears once per pair.
pub fn sample_pair_emissions(cfg: &SourceConfig, duration_s: f64, seed: u64) -> Result<Vec<PairEmission>, SimError> {
    cfg.validate()?;
    if !(duration_s >= 0.0) || !duration_s.is_finite() {
        return Err(SimError::InvalidDuration(duration_s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = EmissionSampler::new(cfg.rep_rate_hz, cfg.pair_prob_per_pulse, duration_s);
    let mut out = Vec::new();
    while let Some((n, k)) = sampler.next_pulse(&mut rng) {
        let e = PairEmission { pulse_index: n, time_s: sampler.pulse_time(n) };
        out.extend(std::iter::repeat_n(e, k as usize));
    }
    Ok(out)
}

/// Draws analyzer outcomes for pairs with fixed per-party analyzer
/// orientations. The four joint distributions are computed once.
#[derive(Debug, Clone)]
pub struct PairMeasurer {
    /// Cumulative [++, +-, -+, --] per (alice basis, bob basis).
    cdf: [[f64; 3]; 4],
}

impl PairMeasurer {
    pub fn new(model: &SingletModel, alice: &AnalyzerSettings, bob: &AnalyzerSettings) -> Self {
        let mut cdf = [[0.0; 3]; 4];
        for (ia, ba) in Basis::BOTH.into_iter().enumerate() {
            for (ib, bb) in Basis::BOTH.into_iter().enumerate() {
                let p = model.joint_distribution(alice.angle(ba), bob.angle(bb));
                cdf[ia * 2 + ib] = [p[0], p[0] + p[1], p[0] + p[1] + p[2]];
            }
        }
        Self { cdf }
    }

    pub fn measure<R: Rng + ?Sized>(&self, rng: &mut R) -> (PolarizationChannel, PolarizationChannel) {
        let bits: u32 = rng.random();
        let ba = if bits & 1 == 0 { Basis::Hv } else { Basis::Diag };
        let bb = if bits & 2 == 0 { Basis::Hv } else { Basis::Diag };
        let c = &self.cdf[((bits & 1) * 2 + ((bits >> 1) & 1)) as usize];
        let u: f64 = rng.random();
        let (oa, ob) = if u < c[0] {
            (Outcome::Plus, Outcome::Plus)
        } else if u < c[1] {
            (Outcome::Plus, Outcome::Minus)
        } else if u < c[2] {
            (Outcome::Minus, Outcome::Plus)
        } else {
            (Outcome::Minus, Outcome::Minus)
        };
        (PolarizationChannel::new(ba, oa), PolarizationChannel::new(bb, ob))
    }
}

/// Each party's beam splitter picks a basis uniformly; outcomes follow the
/// singlet joint law at the resulting analyzer angles.
pub fn measure_pair<R: Rng + ?Sized>(
    model: &SingletModel,
    alice: &AnalyzerSettings,
    bob: &AnalyzerSettings,
    rng: &mut R,
) -> (PolarizationChannel, PolarizationChannel) {
    PairMeasurer::new(model, alice, bob).measure(rng)
}
