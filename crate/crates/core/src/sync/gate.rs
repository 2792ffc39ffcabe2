use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::matcher::CoincidencePair;
use super::SyncError;

/// Rayleigh statistic below which pulse phases count as uniform. For
/// uniform phases P(Z > z) ≈ exp(-z), so 6.9 is a 0.1% false-alarm level.
pub const RAYLEIGH_THRESHOLD: f64 = 6.9;

/// Which tag's phase decides whether a pair is kept.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateSide {
    #[default]
    Alice,
    /// Bob's tag on Alice's timescale.
    Bob,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsePhase {
    /// Circular mean of the tag phases, in `[0, period)`.
    pub phase_s: f64,
    /// Rayleigh statistic `n R²`.
    pub rayleigh_z: f64,
    pub samples: usize,
}

/// Circular mean phase of event times folded on `period_s`. Fails when the
/// phases are consistent with uniform.
pub fn estimate_pulse_phase(times_s: impl IntoIterator<Item = f64>, period_s: f64) -> Result<PulsePhase, SyncError> {
    let (mut c, mut s, mut n) = (0.0, 0.0, 0usize);
    for t in times_s {
        let th = TAU * t.rem_euclid(period_s) / period_s;
        c += th.cos();
        s += th.sin();
        n += 1;
    }
    if n == 0 {
        return Err(SyncError::NoPulseStructure { rayleigh_z: 0.0 });
    }
    let z = (c * c + s * s) / n as f64;
    if z < RAYLEIGH_THRESHOLD {
        return Err(SyncError::NoPulseStructure { rayleigh_z: z });
    }
    let phase = (s.atan2(c).rem_euclid(TAU) / TAU * period_s).rem_euclid(period_s);
    Ok(PulsePhase { phase_s: phase, rayleigh_z: z, samples: n })
}

fn deviation(t: f64, phase: f64, period: f64) -> f64 {
    let d = (t - phase).rem_euclid(period);
    if d >= period / 2.0 {
        d - period
    } else {
        d
    }
}

/// Keeps pairs whose tag falls within `±gate_width/2` of the pulse phase.
/// The phase is estimated from the pairs themselves when not given. A gate
/// as wide as the period keeps everything.
pub fn pulse_gate(
    pairs: &[CoincidencePair],
    period_s: f64,
    gate_width_s: f64,
    phase_s: Option<f64>,
    side: GateSide,
) -> Result<Vec<CoincidencePair>, SyncError> {
    if !(period_s > 0.0 && gate_width_s >= 0.0) {
        return Err(SyncError::InvalidParameter("pulse gate"));
    }
    if gate_width_s >= period_s {
        return Ok(pairs.to_vec());
    }
    let phase = match phase_s {
        Some(p) => p,
        None => estimate_pulse_phase(pairs.iter().map(|p| p.alice.time_s()), period_s)?.phase_s,
    };
    let half = gate_width_s / 2.0;
    let inside = |t: f64| deviation(t, phase, period_s).abs() <= half;
    Ok(pairs
        .iter()
        .filter(|p| {
            let ta = p.alice.time_s();
            let tb = ta + p.residual_s;
            match side {
                GateSide::Alice => inside(ta),
                GateSide::Bob => inside(tb),
                GateSide::Both => inside(ta) && inside(tb),
            }
        })
        .copied()
        .collect())
}
