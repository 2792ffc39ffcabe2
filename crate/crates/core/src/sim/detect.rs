use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::config::{ChannelConfig, DetectorConfig};
use crate::physics::PolarizationChannel;
use crate::timetag::{Party, TICK_S};

/// Detectors cannot resolve two clicks closer than this; it also keeps
/// same-channel tags from landing on one tick.
pub const MIN_DEAD_TIME_S: f64 = 2.0 * TICK_S;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Pair,
    Background,
    Dark,
}

/// A click, in true time, before any clock distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionEvent {
    pub true_time_s: f64,
    pub party: Party,
    pub channel: PolarizationChannel,
    pub origin: Origin,
    pub pair_id: Option<u64>,
}

/// A pair photon reaching a party's analyzer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub time_s: f64,
    pub channel: PolarizationChannel,
    pub pair_id: u64,
}

/// Link transmission over time.
#[derive(Debug, Clone, PartialEq)]
pub enum Transmission {
    Constant(f64),
    /// Loss in dB sampled every `step_s`, held between samples.
    Series { step_s: f64, transmission: Vec<f64> },
}

impl Transmission {
    pub fn from_loss_series(step_s: f64, loss_db: &[f64]) -> Self {
        Self::Series { step_s, transmission: loss_db.iter().map(|&l| super::config::db_to_transmission(l)).collect() }
    }

    pub fn at(&self, t: f64) -> f64 {
        match self {
            Self::Constant(x) => *x,
            Self::Series { step_s, transmission } => {
                let i = ((t / step_s).max(0.0) as usize).min(transmission.len().saturating_sub(1));
                transmission.get(i).copied().unwrap_or(1.0)
            }
        }
    }
}

/// One party's four-detector chain fed incrementally: photons are thinned
/// and jittered on arrival, noise is added per time slice, and dead time is
/// applied once a slice can no longer receive earlier events.
#[derive(Debug)]
pub struct DetectorChain {
    party: Party,
    transmission: Transmission,
    efficiency: f64,
    background_cps: f64,
    dark_cps: f64,
    jitter: Option<Normal<f64>>,
    dead_time_s: f64,
    end_s: f64,
    last_click: [f64; 4],
    pending: Vec<DetectionEvent>,
}

impl DetectorChain {
    pub fn new(party: Party, channel: &ChannelConfig, transmission: Transmission, det: &DetectorConfig, end_s: f64) -> Self {
        let jitter = (det.jitter_sigma_s > 0.0).then(|| Normal::new(0.0, det.jitter_sigma_s).expect("finite sigma"));
        Self {
            party,
            transmission,
            efficiency: det.efficiency,
            background_cps: channel.background_cps_per_detector,
            dark_cps: det.dark_cps,
            jitter,
            dead_time_s: det.dead_time_s.max(MIN_DEAD_TIME_S),
            end_s,
            last_click: [f64::NEG_INFINITY; 4],
            pending: Vec::new(),
        }
    }

    /// Events this far past their nominal time may still show up.
    pub fn lookahead_s(&self) -> f64 {
        self.jitter.map_or(0.0, |n| 10.0 * n.std_dev()) + 1e-9
    }

    /// Returns whether the photon produced a click (before dead time).
    pub fn push_photon<R: Rng + ?Sized>(&mut self, photon: Photon, rng: &mut R) -> bool {
        let p = self.transmission.at(photon.time_s) * self.efficiency;
        if p < 1.0 && rng.random::<f64>() >= p {
            return false;
        }
        let t = photon.time_s + self.jitter.map_or(0.0, |n| n.sample(rng));
        self.pending.push(DetectionEvent {
            true_time_s: t,
            party: self.party,
            channel: photon.channel,
            origin: Origin::Pair,
            pair_id: Some(photon.pair_id),
        });
        true
    }

    /// Poisson background and dark clicks, uniform over `[t0, t1)`.
    pub fn add_noise<R: Rng + ?Sized>(&mut self, t0: f64, t1: f64, rng: &mut R) {
        let t1 = t1.min(self.end_s);
        if t1 <= t0 {
            return;
        }
        let span = t1 - t0;
        for (rate, origin) in [(self.background_cps, Origin::Background), (self.dark_cps, Origin::Dark)] {
            if rate <= 0.0 {
                continue;
            }
            let dist = Poisson::new(rate * span).expect("positive rate");
            for channel in PolarizationChannel::ALL {
                let n = dist.sample(rng) as u64;
                for _ in 0..n {
                    self.pending.push(DetectionEvent {
                        true_time_s: t0 + rng.random::<f64>() * span,
                        party: self.party,
                        channel,
                        origin,
                        pair_id: None,
                    });
                }
            }
        }
    }

    /// Emits, in time order, all pending events earlier than `t`.
    pub fn drain_until(&mut self, t: f64, out: &mut Vec<DetectionEvent>) {
        self.pending.sort_unstable_by(|a, b| a.true_time_s.total_cmp(&b.true_time_s));
        let split = self.pending.partition_point(|e| e.true_time_s < t);
        for e in self.pending.drain(..split) {
            if e.true_time_s < 0.0 || e.true_time_s >= self.end_s {
                continue;
            }
            let last = &mut self.last_click[e.channel.id() as usize];
            if e.true_time_s - *last < self.dead_time_s {
                continue;
            }
            *last = e.true_time_s;
            out.push(e);
        }
    }

    pub fn finish(&mut self, out: &mut Vec<DetectionEvent>) {
        self.drain_until(f64::INFINITY, out);
    }
}

/// Thins photons by link transmission and detector efficiency, adds jitter,
/// background and dark clicks, and applies non-paralyzable dead time per
/// detector. Output is sorted and confined to `[0, duration)`.
pub fn apply_channel_and_detect<R: Rng + ?Sized>(
    photons: &[Photon],
    party: Party,
    channel: &ChannelConfig,
    det: &DetectorConfig,
    duration_s: f64,
    rng: &mut R,
) -> Vec<DetectionEvent> {
    let mut chain = DetectorChain::new(party, channel, Transmission::Constant(channel.transmission()), det, duration_s);
    for &p in photons {
        chain.push_photon(p, rng);
    }
    chain.add_noise(0.0, duration_s, rng);
    let mut out = Vec::new();
    chain.finish(&mut out);
    out
}
