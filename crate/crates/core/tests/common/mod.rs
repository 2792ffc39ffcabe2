#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skylink_core::physics::{SingletModel, VisibilityModel};
use skylink_core::sim::{AnalyzerSettings, PairMeasurer};
use skylink_core::sync::CoincidencePair;
use skylink_core::timetag::TimeTag;

/// `n` perfectly timed coincidences with outcomes drawn from the singlet law.
pub fn singlet_pairs(n: usize, visibility: f64, alice: AnalyzerSettings, bob: AnalyzerSettings, seed: u64) -> Vec<CoincidencePair> {
    let model = SingletModel::new(VisibilityModel::new(visibility, visibility).unwrap());
    let measurer = PairMeasurer::new(&model, &alice, &bob);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (ca, cb) = measurer.measure(&mut rng);
            let tick = 1000 * i as u64;
            CoincidencePair {
                alice: TimeTag::from_parts(ca.id(), tick).unwrap(),
                bob: TimeTag::from_parts(cb.id(), tick).unwrap(),
                residual_s: 0.0,
                alice_index: i,
                bob_index: i,
            }
        })
        .collect()
}

pub fn settings(hv: f64, diag: f64) -> AnalyzerSettings {
    AnalyzerSettings::from_degrees(hv, diag).unwrap()
}
