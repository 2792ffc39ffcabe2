use serde::{Deserialize, Serialize};

use super::SimError;
use crate::physics::{AnalyzerAngle, Basis, VisibilityModel};

/// Upper bound on the mean pair number per pulse (low-gain regime).
pub const MAX_PAIR_PROB: f64 = 0.1;
/// Largest fractional frequency offset a clock may have.
pub const MAX_DRIFT: f64 = 1e-6;
/// Drift bound for a GPS-disciplined oscillator.
pub const GPS_DRIFT_BOUND: f64 = 1e-11;

fn check(cond: bool, field: &'static str, msg: impl Into<String>) -> Result<(), SimError> {
    if cond {
        Ok(())
    } else {
        Err(SimError::InvalidConfig { field, reason: msg.into() })
    }
}

/// Pulsed SPDC source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub rep_rate_hz: f64,
    /// Mean number of pairs per pump pulse.
    pub pair_prob_per_pulse: f64,
    /// Probability that one photon of a pair is collected into its arm
    /// (fiber coupling and local detection lumped together).
    pub local_coupling_eff: f64,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        check(self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0, "rep_rate_hz", "must be positive")?;
        if !(self.pair_prob_per_pulse >= 0.0 && self.pair_prob_per_pulse < MAX_PAIR_PROB) {
            return Err(SimError::PairProbTooHigh(self.pair_prob_per_pulse));
        }
        check((0.0..=1.0).contains(&self.local_coupling_eff), "local_coupling_eff", "must lie in [0, 1]")
    }

    pub fn pulse_period_s(&self) -> f64 {
        1.0 / self.rep_rate_hz
    }
}

/// Slow log-normal fading of the link loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadingModel {
    /// Standard deviation of the loss around its mean, in dB.
    pub sigma_db: f64,
    pub correlation_time_s: f64,
    /// Sampling step of the loss series.
    #[serde(default = "FadingModel::default_step")]
    pub step_s: f64,
    /// Beam drifting off the receiver: loss grows by this many dB per second
    /// and never recovers. Zero means closed-loop tracking is on.
    #[serde(default)]
    pub tracking_off_ramp_db_per_s: f64,
}

impl FadingModel {
    fn default_step() -> f64 {
        0.1
    }

    /// σ = 1.8 dB with a 30 s correlation time: a −30 dB link then stays
    /// within [−35, −25] dB nearly all the time.
    pub fn typical() -> Self {
        Self { sigma_db: 1.8, correlation_time_s: 30.0, step_s: 0.1, tracking_off_ramp_db_per_s: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(self.sigma_db.is_finite() && self.sigma_db >= 0.0, "fading.sigma_db", "must be >= 0")?;
        check(self.correlation_time_s > 0.0, "fading.correlation_time_s", "must be positive")?;
        check(self.step_s > 0.0, "fading.step_s", "must be positive")?;
        check(
            self.tracking_off_ramp_db_per_s.is_finite() && self.tracking_off_ramp_db_per_s >= 0.0,
            "fading.tracking_off_ramp_db_per_s",
            "must be >= 0",
        )
    }
}

/// The free-space link between source and Bob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Mean optical attenuation of the link, dB (positive = loss).
    pub link_loss_db: f64,
    #[serde(default)]
    pub background_cps_per_detector: f64,
    #[serde(default)]
    pub fading: Option<FadingModel>,
}

impl ChannelConfig {
    /// No loss, no background: the local arm at the source.
    pub fn transparent() -> Self {
        Self { link_loss_db: 0.0, background_cps_per_detector: 0.0, fading: None }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(self.link_loss_db.is_finite() && self.link_loss_db >= 0.0, "link_loss_db", "must be finite and >= 0")?;
        check(
            self.background_cps_per_detector.is_finite() && self.background_cps_per_detector >= 0.0,
            "background_cps_per_detector",
            "must be >= 0",
        )?;
        if let Some(f) = &self.fading {
            f.validate()?;
        }
        Ok(())
    }

    pub fn transmission(&self) -> f64 {
        db_to_transmission(self.link_loss_db)
    }
}

pub fn db_to_transmission(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Four identical single-photon detectors behind a polarization analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    #[serde(default)]
    pub dark_cps: f64,
    #[serde(default = "DetectorConfig::default_jitter")]
    pub jitter_sigma_s: f64,
    #[serde(default = "DetectorConfig::default_dead_time")]
    pub dead_time_s: f64,
}

impl DetectorConfig {
    pub const DEFAULT_JITTER_S: f64 = 400e-12;
    pub const DEFAULT_DEAD_TIME_S: f64 = 50e-9;

    fn default_jitter() -> f64 {
        Self::DEFAULT_JITTER_S
    }

    fn default_dead_time() -> f64 {
        Self::DEFAULT_DEAD_TIME_S
    }

    /// Noise-free detector with no jitter or dead time.
    pub fn ideal() -> Self {
        Self { efficiency: 1.0, dark_cps: 0.0, jitter_sigma_s: 0.0, dead_time_s: 0.0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check((0.0..=1.0).contains(&self.efficiency), "efficiency", "must lie in [0, 1]")?;
        check(self.dark_cps.is_finite() && self.dark_cps >= 0.0, "dark_cps", "must be >= 0")?;
        check(self.jitter_sigma_s.is_finite() && self.jitter_sigma_s >= 0.0, "jitter_sigma_s", "must be >= 0")?;
        check(self.dead_time_s.is_finite() && self.dead_time_s >= 0.0, "dead_time_s", "must be >= 0")
    }
}

/// A change of oscillator frequency offset at a given true time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftStep {
    pub at_s: f64,
    pub drift_rate: f64,
}

/// Maps true time to a party's local timescale:
/// `local = true + offset + ∫ drift`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockConfig {
    #[serde(default)]
    pub offset_s: f64,
    #[serde(default)]
    pub drift_rate: f64,
    #[serde(default)]
    pub gps_correction: bool,
    /// Later drift changes, sorted by time; the map stays continuous.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift_steps: Vec<DriftStep>,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self::ideal()
    }
}

impl ClockConfig {
    pub fn ideal() -> Self {
        Self { offset_s: 0.0, drift_rate: 0.0, gps_correction: true, drift_steps: Vec::new() }
    }

    pub fn with_offset(offset_s: f64, drift_rate: f64) -> Self {
        Self { offset_s, drift_rate, gps_correction: drift_rate.abs() <= GPS_DRIFT_BOUND, drift_steps: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(
            self.offset_s.is_finite() && self.offset_s >= 0.0,
            "offset_s",
            "must be finite and >= 0 (tags cannot precede the epoch)",
        )?;
        let bound = if self.gps_correction { GPS_DRIFT_BOUND } else { MAX_DRIFT };
        let rates = std::iter::once(self.drift_rate).chain(self.drift_steps.iter().map(|s| s.drift_rate));
        for r in rates {
            check(
                r.is_finite() && r.abs() <= bound * (1.0 + 1e-9),
                "drift_rate",
                format!("|{r}| exceeds {bound} (gps_correction = {})", self.gps_correction),
            )?;
        }
        check(
            self.drift_steps.windows(2).all(|w| w[0].at_s < w[1].at_s),
            "drift_steps",
            "must be sorted by time",
        )
    }

    /// Local time of an event at true time `t`.
    pub fn local_time(&self, t: f64) -> f64 {
        let mut local = self.offset_s + t;
        let mut rate = self.drift_rate;
        let mut since = 0.0;
        for step in &self.drift_steps {
            if step.at_s >= t {
                break;
            }
            local += rate * (step.at_s - since);
            since = step.at_s;
            rate = step.drift_rate;
        }
        local + rate * (t - since)
    }
}

/// Fixed analyzer orientation per basis for one party.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzerSettings {
    pub hv: AnalyzerAngle,
    pub diag: AnalyzerAngle,
}

impl AnalyzerSettings {
    /// H/V at 0°, ±45° at 45°: the key-distribution orientation.
    pub fn standard() -> Self {
        Self { hv: Basis::Hv.nominal_angle(), diag: Basis::Diag.nominal_angle() }
    }

    pub fn from_degrees(hv: f64, diag: f64) -> Result<Self, SimError> {
        Ok(Self {
            hv: AnalyzerAngle::new(hv).map_err(|e| SimError::InvalidConfig { field: "hv", reason: e.to_string() })?,
            diag: AnalyzerAngle::new(diag).map_err(|e| SimError::InvalidConfig { field: "diag", reason: e.to_string() })?,
        })
    }

    pub fn angle(&self, basis: Basis) -> AnalyzerAngle {
        match basis {
            Basis::Hv => self.hv,
            Basis::Diag => self.diag,
        }
    }
}

/// Everything physical about one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSetup {
    pub source: SourceConfig,
    pub visibility: VisibilityModel,
    pub alice_analyzer: AnalyzerSettings,
    pub bob_analyzer: AnalyzerSettings,
    /// Bob's free-space link.
    pub channel: ChannelConfig,
    pub alice_detector: DetectorConfig,
    pub bob_detector: DetectorConfig,
    #[serde(default)]
    pub alice_clock: ClockConfig,
    #[serde(default)]
    pub bob_clock: ClockConfig,
    /// Agreed start epoch, integer seconds.
    #[serde(default)]
    pub epoch: u64,
}

impl LinkSetup {
    pub fn validate(&self) -> Result<(), SimError> {
        self.source.validate()?;
        self.visibility
            .validate()
            .map_err(|e| SimError::InvalidConfig { field: "visibility", reason: e.to_string() })?;
        self.channel.validate()?;
        self.alice_detector.validate()?;
        self.bob_detector.validate()?;
        self.alice_clock.validate()?;
        self.bob_clock.validate()
    }
}
