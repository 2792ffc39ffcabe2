//! Offline analysis of a recorded Alice/Bob tag pair: synchronization,
//! coincidence extraction and pulse gating, feeding Bell and key reports.

use serde::{Deserialize, Serialize};

use crate::bell::{tally_coincidences, BellError, BellReport, SettingMap, SignPattern};
use crate::physics::ChshSettings;
use crate::qkd::{distill_key, sift, KeyConfig, KeyReport, QkdError, RawKeyPair};
use crate::sync::{
    coincidence_histogram, estimate_offset, estimate_pulse_phase, find_coincidences, pulse_gate, track_drift,
    ClockSolution, CoincidenceHistogram, CoincidencePair, GateSide, OffsetEstimate, OffsetSearch, PulsePhase,
    SyncError, DEFAULT_SEGMENT_S, WINDOW_NARROW_S,
};
use crate::timetag::{TimeTag, TICK_S};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub window_s: f64,
    pub pulse_period_s: f64,
    pub gating: bool,
    pub gate_width_s: f64,
    pub gate_side: GateSide,
    pub search: OffsetSearch,
    pub segment_s: f64,
    /// Analyzer angles behind each party's H/V and diagonal ports.
    pub settings: ChshSettings,
    pub sign_pattern: SignPattern,
    pub histogram_span_s: f64,
    pub histogram_bin_s: f64,
    pub key: KeyConfig,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            window_s: WINDOW_NARROW_S,
            pulse_period_s: 1.0 / 249e6,
            gating: true,
            gate_width_s: 0.8e-9,
            gate_side: GateSide::Bob,
            search: OffsetSearch::default(),
            segment_s: DEFAULT_SEGMENT_S,
            settings: ChshSettings::canonical(),
            sign_pattern: SignPattern::STANDARD,
            histogram_span_s: 100e-9,
            histogram_bin_s: 2.0 * TICK_S,
            key: KeyConfig::default(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), SyncError> {
        self.search.validate()?;
        let ok = self.window_s > 0.0
            && self.pulse_period_s > 0.0
            && self.gate_width_s > 0.0
            && self.segment_s > 0.0
            && self.histogram_bin_s >= TICK_S * 0.999
            && self.histogram_span_s >= self.histogram_bin_s;
        if ok {
            Ok(())
        } else {
            Err(SyncError::InvalidParameter("analysis config"))
        }
    }
}

/// Coincidences of two synchronized streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncedPairs {
    pub offset: OffsetEstimate,
    pub clock: ClockSolution,
    /// All matched pairs inside the coincidence window.
    pub matched: Vec<CoincidencePair>,
    /// Pairs passing the pulse gate; equal to `matched` with gating off.
    pub pairs: Vec<CoincidencePair>,
    pub phase: Option<PulsePhase>,
}

impl SyncedPairs {
    pub fn rate_cps(&self, duration_s: f64) -> f64 {
        if duration_s > 0.0 {
            self.pairs.len() as f64 / duration_s
        } else {
            0.0
        }
    }
}

/// Offset search, drift tracking, matching and gating.
pub fn synchronize(a: &[TimeTag], b: &[TimeTag], cfg: &AnalysisConfig) -> Result<SyncedPairs, SyncError> {
    cfg.validate()?;
    let offset = estimate_offset(a, b, &cfg.search)?;
    let clock = track_drift(a, b, &offset, &cfg.search, cfg.segment_s)?;
    let matched = find_coincidences(a, b, &clock, cfg.window_s);
    let (pairs, phase) = gate(&matched, cfg)?;
    Ok(SyncedPairs { offset, clock, matched, pairs, phase })
}

/// Applies the configured pulse gate, estimating the pulse phase from the
/// pairs themselves.
pub fn gate(matched: &[CoincidencePair], cfg: &AnalysisConfig) -> Result<(Vec<CoincidencePair>, Option<PulsePhase>), SyncError> {
    if !cfg.gating {
        return Ok((matched.to_vec(), None));
    }
    let phase = estimate_pulse_phase(matched.iter().map(|p| p.alice.time_s()), cfg.pulse_period_s)?;
    Ok((pulse_gate(matched, cfg.pulse_period_s, cfg.gate_width_s, Some(phase.phase_s), cfg.gate_side)?, Some(phase)))
}

pub fn bell_report(pairs: &[CoincidencePair], cfg: &AnalysisConfig) -> Result<BellReport, BellError> {
    let tally = tally_coincidences(pairs, &SettingMap::chsh(&cfg.settings));
    BellReport::from_tally(&tally, cfg.sign_pattern)
}

/// Sifts the pairs and distills a key. The raw key is returned even when
/// distillation fails, for reporting.
pub fn key_report(pairs: &[CoincidencePair], cfg: &AnalysisConfig) -> (RawKeyPair, Result<KeyReport, QkdError>) {
    let raw = sift(pairs);
    let report = distill_key(&raw, &cfg.key);
    (raw, report)
}

pub fn histogram(
    a: &[TimeTag],
    b: &[TimeTag],
    clock: &ClockSolution,
    cfg: &AnalysisConfig,
) -> Result<CoincidenceHistogram, SyncError> {
    coincidence_histogram(a, b, clock, cfg.histogram_span_s, cfg.histogram_bin_s)
}
