use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QkdError;
use crate::physics::{Basis, Outcome, PolarizationChannel};
use crate::sync::CoincidencePair;

/// Sifted key bits of both parties, bit `i` of each from the same
/// coincidence. Bits are stored one per byte (0 or 1).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawKeyPair {
    pub alice: Vec<u8>,
    pub bob: Vec<u8>,
    pub bases: Vec<Basis>,
    /// Index of the source coincidence in the sifted list.
    pub sources: Vec<usize>,
}

impl RawKeyPair {
    pub fn len(&self) -> usize {
        self.alice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alice.is_empty()
    }

    pub fn errors(&self) -> usize {
        self.alice.iter().zip(&self.bob).filter(|(a, b)| a != b).count()
    }

    fn push(&mut self, a: u8, b: u8, basis: Basis, source: usize) {
        self.alice.push(a);
        self.bob.push(b);
        self.bases.push(basis);
        self.sources.push(source);
    }

    /// Test helper: `n` random bits with exactly `errors` flipped on Bob's side.
    pub fn with_planted_errors(n: usize, errors: usize, seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alice: Vec<u8> = (0..n).map(|_| rng.random_range(0..2u8)).collect();
        let mut bob = alice.clone();
        for i in index::sample(&mut rng, n, errors.min(n)) {
            bob[i] ^= 1;
        }
        let bases = (0..n).map(|i| Basis::BOTH[i % 2]).collect();
        Self { alice, bob, bases, sources: (0..n).collect() }
    }
}

fn bit(o: Outcome) -> u8 {
    match o {
        Outcome::Plus => 0,
        Outcome::Minus => 1,
    }
}

/// Keeps basis-matched coincidences. H and + map to 0, V and − to 1; Bob's
/// bit is inverted so that singlet anticorrelation yields equal bits.
pub fn sift(pairs: &[CoincidencePair]) -> RawKeyPair {
    let mut raw = RawKeyPair::default();
    for (i, p) in pairs.iter().enumerate() {
        let (Some(a), Some(b)) = (PolarizationChannel::from_id(p.alice.channel()), PolarizationChannel::from_id(p.bob.channel()))
        else {
            continue;
        };
        if a.basis() == b.basis() {
            raw.push(bit(a.outcome()), bit(b.outcome()) ^ 1, a.basis(), i);
        }
    }
    raw
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum QberMode {
    /// Full comparison against ground truth; nothing is disclosed.
    #[default]
    Oracle,
    /// Publicly compare a random `fraction` of the key and discard it.
    Sampled { fraction: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QberEstimate {
    pub qber: f64,
    pub errors: usize,
    pub compared: usize,
    /// Key bits revealed by the estimate. These are removed from the key.
    pub disclosed: usize,
}

/// Returns the estimate and the key left for reconciliation.
pub fn estimate_qber(raw: &RawKeyPair, mode: QberMode) -> Result<(QberEstimate, RawKeyPair), QkdError> {
    if raw.is_empty() {
        return Err(QkdError::EmptyKey);
    }
    match mode {
        QberMode::Oracle => {
            let errors = raw.errors();
            let est = QberEstimate { qber: errors as f64 / raw.len() as f64, errors, compared: raw.len(), disclosed: 0 };
            Ok((est, raw.clone()))
        }
        QberMode::Sampled { fraction, seed } => {
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(QkdError::InvalidParameter("sample fraction"));
            }
            let n = raw.len();
            let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut picked = vec![false; n];
            for i in index::sample(&mut rng, n, k) {
                picked[i] = true;
            }
            let mut rest = RawKeyPair::default();
            let mut errors = 0;
            for i in 0..n {
                if picked[i] {
                    errors += (raw.alice[i] != raw.bob[i]) as usize;
                } else {
                    rest.push(raw.alice[i], raw.bob[i], raw.bases[i], raw.sources[i]);
                }
            }
            let est = QberEstimate { qber: errors as f64 / k as f64, errors, compared: k, disclosed: k };
            Ok((est, rest))
        }
    }
}
