mod common;

use common::{settings, singlet_pairs};
use skylink_core::qkd::{binary_entropy, cascade, distill_key, sift, CascadeConfig, KeyConfig, RawKeyPair};

#[test]
fn cascade_leakage_stays_near_the_shannon_limit() {
    let n = 10_000;
    for q in [0.02, 0.05, 0.08] {
        let limit = 1.2 * n as f64 * binary_entropy(q).unwrap();
        let mut total = 0;
        for seed in 0..20 {
            let raw = RawKeyPair::with_planted_errors(n, (q * n as f64).round() as usize, 100 + seed);
            let (fixed, t) = cascade(&raw, q, &CascadeConfig::default(), seed).unwrap();
            assert_eq!(fixed.errors(), 0, "q {q} seed {seed}");
            assert_eq!(t.recount(), t.parity_bits_disclosed);
            total += t.parity_bits_disclosed;
        }
        let mean = total as f64 / 20.0;
        assert!(mean <= limit, "q {q}: {mean:.0} > {limit:.0}");
    }
}

#[test]
fn distilled_keys_agree_across_seeds() {
    let mut identical = 0;
    for seed in 0..100 {
        let raw = RawKeyPair::with_planted_errors(417, 20, seed);
        let cfg = KeyConfig { seed, ..KeyConfig::default() };
        match distill_key(&raw, &cfg) {
            Ok(r) => {
                assert!(r.keys_identical());
                assert!((120..=260).contains(&r.alice_key.len()), "seed {seed}: {} bits", r.alice_key.len());
                identical += 1;
            }
            Err(e) => eprintln!("seed {seed}: {e}"),
        }
    }
    assert!(identical >= 99, "{identical}/100");
}

#[test]
fn sifting_keeps_half_of_the_pairs() {
    let n = 20_000;
    let pairs = singlet_pairs(n, 0.97, settings(0.0, 45.0), settings(0.0, 45.0), 9);
    let raw = sift(&pairs);
    let sigma = (0.25 / n as f64).sqrt();
    let fraction = raw.len() as f64 / n as f64;
    assert!((fraction - 0.5).abs() <= 3.0 * sigma, "{fraction}");
    // aligned singlet analyzers: errors come only from the missing visibility
    let q = raw.errors() as f64 / raw.len() as f64;
    assert!((q - 0.015).abs() < 0.005, "{q}");
}

#[test]
fn noisy_key_is_refused_rather_than_shortened_to_garbage() {
    let raw = RawKeyPair::with_planted_errors(417, 60, 1);
    assert!(distill_key(&raw, &KeyConfig::default()).is_err());
}
