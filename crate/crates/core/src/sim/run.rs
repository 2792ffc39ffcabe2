use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use super::config::{ChannelConfig, ClockConfig, LinkSetup};
use super::detect::{DetectionEvent, DetectorChain, Origin, Photon, Transmission};
use super::fading::link_efficiency_series;
use super::source::{pulse_count, EmissionSampler, PairMeasurer};
use super::SimError;
use crate::physics::SingletModel;
use crate::timetag::{Party, TagStream, TimeTag};

const CHUNK_S: f64 = 0.05;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OriginCounts {
    pub pair: u64,
    pub background: u64,
    pub dark: u64,
}

impl OriginCounts {
    pub fn total(&self) -> u64 {
        self.pair + self.background + self.dark
    }

    fn add(&mut self, origin: Origin) {
        match origin {
            Origin::Pair => self.pair += 1,
            Origin::Background => self.background += 1,
            Origin::Dark => self.dark += 1,
        }
    }
}

/// What actually happened in a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub duration_s: f64,
    pub emitted_pairs: u64,
    /// Pairs with at least one photon coupled into an arm.
    pub collected_pairs: u64,
    /// Pairs detected by both parties.
    pub detected_pairs: u64,
    pub alice: OriginCounts,
    pub bob: OriginCounts,
    pub alice_clock: ClockConfig,
    pub bob_clock: ClockConfig,
    /// (alice tag index, bob tag index) of every pair seen by both.
    #[serde(skip)]
    pub true_pairs: Vec<(usize, usize)>,
    /// Origin of each Bob tag, by index.
    #[serde(skip)]
    pub bob_origins: Vec<Origin>,
}

impl GroundTruth {
    /// Human-readable TOML summary (tag-level detail omitted).
    pub fn summary(&self) -> String {
        toml::to_string_pretty(self).expect("ground truth serializes")
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub alice: TagStream,
    pub bob: TagStream,
    pub truth: GroundTruth,
}

/// Per-party encoder from detection events to tags with bookkeeping.
struct Recorder {
    clock: ClockConfig,
    tags: Vec<TimeTag>,
    counts: OriginCounts,
    origins: Option<Vec<Origin>>,
    pair_index: HashMap<u64, usize>,
}

impl Recorder {
    fn new(clock: ClockConfig, keep_origins: bool) -> Self {
        Self { clock, tags: Vec::new(), counts: OriginCounts::default(), origins: keep_origins.then(Vec::new), pair_index: HashMap::new() }
    }

    fn record(&mut self, events: &mut Vec<DetectionEvent>, wanted: impl Fn(u64) -> bool) -> Result<(), SimError> {
        for e in events.drain(..) {
            let local = self.clock.local_time(e.true_time_s);
            let tag = TimeTag::encode(e.channel.id(), local)?;
            if let Some(id) = e.pair_id {
                if wanted(id) {
                    self.pair_index.insert(id, self.tags.len());
                }
            }
            if let Some(o) = &mut self.origins {
                o.push(e.origin);
            }
            self.counts.add(e.origin);
            self.tags.push(tag);
        }
        Ok(())
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Runs source, link, detectors and clocks for `duration_s` seconds and
/// encodes both parties' clicks as tag streams. Deterministic in `seed`.
///
/// Only pairs with at least one photon coupled into an arm are sampled one
/// by one; the rest are counted in bulk.
pub fn simulate_run(setup: &LinkSetup, duration_s: f64, seed: u64) -> Result<SimOutput, SimError> {
    setup.validate()?;
    if !(duration_s >= 0.0 && duration_s.is_finite()) {
        return Err(SimError::InvalidDuration(duration_s));
    }
    let mut rng_source = stream(seed, 0);
    let mut rng_measure = stream(seed, 1);
    let mut rng_alice = stream(seed, 2);
    let mut rng_bob = stream(seed, 3);

    let src = &setup.source;
    let eta = src.local_coupling_eff;
    let collect = 1.0 - (1.0 - eta) * (1.0 - eta);
    let p_both = if collect > 0.0 { eta * eta / collect } else { 0.0 };
    let p_alice_only = if collect > 0.0 { eta * (1.0 - eta) / collect } else { 0.0 };

    let bob_transmission = match &setup.channel.fading {
        Some(f) => {
            let series = link_efficiency_series(f, setup.channel.link_loss_db, duration_s, f.step_s, seed ^ 0xfad1_4600)?;
            Transmission::from_loss_series(f.step_s, &series)
        }
        None => Transmission::Constant(setup.channel.transmission()),
    };
    let mut alice = DetectorChain::new(Party::Alice, &ChannelConfig::transparent(), Transmission::Constant(1.0), &setup.alice_detector, duration_s);
    let mut bob = DetectorChain::new(Party::Bob, &setup.channel, bob_transmission, &setup.bob_detector, duration_s);
    let measurer = PairMeasurer::new(&SingletModel::new(setup.visibility), &setup.alice_analyzer, &setup.bob_analyzer);
    let mut sampler = EmissionSampler::new(src.rep_rate_hz, src.pair_prob_per_pulse * collect, duration_s);

    let mut alice_rec = Recorder::new(setup.alice_clock.clone(), false);
    let mut bob_rec = Recorder::new(setup.bob_clock.clone(), true);
    let mut bob_clicked: HashSet<u64> = HashSet::new();
    let mut events = Vec::new();
    let mut next = sampler.next_pulse(&mut rng_source);
    let mut pair_id = 0u64;
    let lookahead = alice.lookahead_s().max(bob.lookahead_s());

    let mut t0 = 0.0;
    while t0 < duration_s {
        let t1 = (t0 + CHUNK_S).min(duration_s);
        while let Some((pulse, k)) = next {
            let t = sampler.pulse_time(pulse);
            if t >= t1 {
                break;
            }
            for _ in 0..k {
                pair_id += 1;
                let (ca, cb) = measurer.measure(&mut rng_measure);
                let u: f64 = rng_source.random();
                let (to_alice, to_bob) = if u < p_both {
                    (true, true)
                } else if u < p_both + p_alice_only {
                    (true, false)
                } else {
                    (false, true)
                };
                if to_bob && bob.push_photon(Photon { time_s: t, channel: cb, pair_id }, &mut rng_bob) {
                    bob_clicked.insert(pair_id);
                }
                if to_alice {
                    alice.push_photon(Photon { time_s: t, channel: ca, pair_id }, &mut rng_alice);
                }
            }
            next = sampler.next_pulse(&mut rng_source);
        }
        bob.add_noise(t0, t1, &mut rng_bob);
        alice.add_noise(t0, t1, &mut rng_alice);
        let safe = if t1 >= duration_s { f64::INFINITY } else { t1 - lookahead };
        bob.drain_until(safe, &mut events);
        bob_rec.record(&mut events, |_| true)?;
        alice.drain_until(safe, &mut events);
        alice_rec.record(&mut events, |id| bob_clicked.contains(&id))?;
        t0 = t1;
    }

    let uncollected_mean = src.pair_prob_per_pulse * (1.0 - collect) * pulse_count(src.rep_rate_hz, duration_s) as f64;
    let uncollected = if uncollected_mean > 0.0 {
        Poisson::new(uncollected_mean).expect("positive mean").sample(&mut stream(seed, 4)) as u64
    } else {
        0
    };

    let mut true_pairs: Vec<(usize, usize)> = bob_rec
        .pair_index
        .iter()
        .filter_map(|(id, &b)| alice_rec.pair_index.get(id).map(|&a| (a, b)))
        .collect();
    true_pairs.sort_unstable();

    let truth = GroundTruth {
        seed,
        duration_s,
        emitted_pairs: pair_id + uncollected,
        collected_pairs: pair_id,
        detected_pairs: true_pairs.len() as u64,
        alice: alice_rec.counts,
        bob: bob_rec.counts,
        alice_clock: setup.alice_clock.clone(),
        bob_clock: setup.bob_clock.clone(),
        true_pairs,
        bob_origins: bob_rec.origins.unwrap_or_default(),
    };
    Ok(SimOutput {
        alice: TagStream::new(Party::Alice, setup.epoch, alice_rec.tags)?,
        bob: TagStream::new(Party::Bob, setup.epoch, bob_rec.tags)?,
        truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::VisibilityModel;
    use crate::sim::config::{AnalyzerSettings, DetectorConfig, SourceConfig};

    fn small_setup() -> LinkSetup {
        LinkSetup {
            source: SourceConfig { rep_rate_hz: 249e6, pair_prob_per_pulse: 2e-3, local_coupling_eff: 0.3 },
            visibility: VisibilityModel::new(0.98, 0.96).unwrap(),
            alice_analyzer: AnalyzerSettings::standard(),
            bob_analyzer: AnalyzerSettings::standard(),
            channel: ChannelConfig { link_loss_db: 10.0, background_cps_per_detector: 50.0, fading: None },
            alice_detector: DetectorConfig { efficiency: 1.0, dark_cps: 200.0, jitter_sigma_s: 400e-12, dead_time_s: 50e-9 },
            bob_detector: DetectorConfig { efficiency: 0.25, dark_cps: 200.0, jitter_sigma_s: 400e-12, dead_time_s: 50e-9 },
            alice_clock: ClockConfig::ideal(),
            bob_clock: ClockConfig::with_offset(487e-6, 1e-11),
            epoch: 1_000_000,
        }
    }

    #[test]
    fn zero_duration_gives_empty_streams() {
        let out = simulate_run(&small_setup(), 0.0, 1).unwrap();
        assert!(out.alice.is_empty() && out.bob.is_empty());
        assert_eq!(out.truth.emitted_pairs, 0);
    }

    #[test]
    fn same_seed_same_streams() {
        let a = simulate_run(&small_setup(), 0.2, 42).unwrap();
        let b = simulate_run(&small_setup(), 0.2, 42).unwrap();
        assert_eq!(a.alice, b.alice);
        assert_eq!(a.bob, b.bob);
        assert_eq!(a.truth, b.truth);
        let c = simulate_run(&small_setup(), 0.2, 43).unwrap();
        assert_ne!(a.bob, c.bob);
    }

    #[test]
    fn counts_match_streams() {
        let out = simulate_run(&small_setup(), 0.3, 7).unwrap();
        assert_eq!(out.truth.alice.total(), out.alice.len() as u64);
        assert_eq!(out.truth.bob.total(), out.bob.len() as u64);
        assert_eq!(out.truth.bob_origins.len(), out.bob.len());
        let pair_origins = out.truth.bob_origins.iter().filter(|&&o| o == Origin::Pair).count() as u64;
        assert_eq!(pair_origins, out.truth.bob.pair);
        assert!(out.truth.detected_pairs > 0);
        assert!(out.truth.emitted_pairs >= out.truth.collected_pairs);
    }

    #[test]
    fn true_pairs_are_close_after_clock_correction() {
        let setup = small_setup();
        let out = simulate_run(&setup, 0.3, 8).unwrap();
        for &(a, b) in &out.truth.true_pairs {
            let ta = out.alice.tags()[a].time_s();
            let tb = out.bob.tags()[b].time_s();
            // undo Bob's clock: local = t (1 + d) + offset
            let tb_true = (tb - 487e-6) / (1.0 + 1e-11);
            assert!((ta - tb_true).abs() < 5e-9, "{ta} {tb_true}");
            assert_eq!(out.truth.bob_origins[b], Origin::Pair);
        }
    }

    #[test]
    fn singles_rates_follow_link_budget() {
        let setup = small_setup();
        let d = 0.5;
        let out = simulate_run(&setup, d, 9).unwrap();
        let pairs_per_s = 249e6 * 2e-3;
        let alice_signal = pairs_per_s * 0.3;
        let bob_signal = pairs_per_s * 0.3 * 0.1 * 0.25;
        // Alice loses a little to dead time at ~150 kcps per detector
        let a = out.truth.alice.pair as f64 / d;
        assert!((a / alice_signal - 1.0).abs() < 0.02, "alice {a} vs {alice_signal}");
        let b = out.truth.bob.pair as f64 / d;
        assert!((b - bob_signal).abs() < 4.0 * (bob_signal / d).sqrt(), "bob {b} vs {bob_signal}");
        let noise = out.truth.bob.background + out.truth.bob.dark;
        assert!((noise as f64 / d - 1000.0).abs() < 4.0 * (1000.0f64 / d).sqrt());
    }

    #[test]
    fn summary_is_toml() {
        let out = simulate_run(&small_setup(), 0.05, 1).unwrap();
        let s = out.truth.summary();
        let v: toml::Table = s.parse().unwrap();
        assert_eq!(v["seed"].as_integer(), Some(1));
        assert!(v.contains_key("bob_clock"));
    }
}
