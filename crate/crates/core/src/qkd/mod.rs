//! BBM92 post-processing: sifting, error estimation, Cascade
//! reconciliation and Toeplitz privacy amplification.

mod amplify;
mod cascade;
mod sift;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use amplify::{binary_entropy, privacy_amplification, toeplitz_hash, KeyLedger, SecretKey};
pub use cascade::{
    cascade, first_block_size, AliceEndpoint, CascadeConfig, ParityReply, ParitySource, Permutations,
    ReconciliationTranscript,
};
pub use sift::{estimate_qber, sift, QberEstimate, QberMode, RawKeyPair};

#[derive(Debug, Error, PartialEq)]
pub enum QkdError {
    #[error("key is empty")]
    EmptyKey,
    #[error("QBER hint {0} outside (0, 0.15)")]
    QberHintOutOfRange(f64),
    #[error("key exhausted: final length would be {final_length} bits")]
    KeyExhausted { final_length: i64 },
    #[error("reconciled keys still differ after {passes} passes")]
    ResidualErrors { passes: u32 },
    #[error("invalid {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyConfig {
    pub qber_mode: QberMode,
    pub cascade: CascadeConfig,
    pub security_param: u64,
    /// Length of the public hash compared after reconciliation in sampled
    /// mode. Counted as disclosed.
    pub verify_bits: u32,
    /// Lower clamp on the QBER fed to Cascade as its hint.
    pub min_qber_hint: f64,
    /// Public seed for permutations, verification and hashing.
    pub seed: u64,
}

impl Default for KeyConfig {
    fn default() -> Self {
        Self {
            qber_mode: QberMode::Oracle,
            cascade: CascadeConfig::default(),
            security_param: 30,
            verify_bits: 16,
            min_qber_hint: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyReport {
    pub raw_length: usize,
    pub estimate: QberEstimate,
    pub reconciled_length: usize,
    pub transcript: ReconciliationTranscript,
    pub verify_bits: u32,
    pub alice_key: SecretKey,
    pub bob_key: SecretKey,
}

impl KeyReport {
    pub fn keys_identical(&self) -> bool {
        self.alice_key.bits == self.bob_key.bits
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Summary {
            raw_length: usize,
            qber: f64,
            qber_errors: usize,
            qber_disclosed: usize,
            reconciled_length: usize,
            parity_bits_disclosed: u64,
            verify_bits: u32,
            corrected_bits: u64,
            entropy_bound: f64,
            security_param: u64,
            final_length: usize,
            keys_identical: bool,
            key_hex: String,
        }
        toml::to_string(&Summary {
            raw_length: self.raw_length,
            qber: self.estimate.qber,
            qber_errors: self.estimate.errors,
            qber_disclosed: self.estimate.disclosed,
            reconciled_length: self.reconciled_length,
            parity_bits_disclosed: self.transcript.parity_bits_disclosed,
            verify_bits: self.verify_bits,
            corrected_bits: self.transcript.blocks_corrected,
            entropy_bound: self.alice_key.ledger.entropy_bound,
            security_param: self.alice_key.ledger.security_param,
            final_length: self.alice_key.len(),
            keys_identical: self.keys_identical(),
            key_hex: self.alice_key.to_hex(),
        })
        .expect("plain table")
    }
}

impl fmt::Display for KeyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "raw key          {} bits", self.raw_length)?;
        writeln!(
            f,
            "QBER             {:.2}% ({} / {} compared, {} disclosed)",
            100.0 * self.estimate.qber,
            self.estimate.errors,
            self.estimate.compared,
            self.estimate.disclosed
        )?;
        writeln!(
            f,
            "reconciliation   {} parities, {} corrected, {} verification bits",
            self.transcript.parity_bits_disclosed, self.transcript.blocks_corrected, self.verify_bits
        )?;
        writeln!(
            f,
            "final key        {} bits (h2 = {:.4}, s = {})",
            self.alice_key.len(),
            self.alice_key.ledger.entropy_bound,
            self.alice_key.ledger.security_param
        )
    }
}

/// Runs estimation, reconciliation, verification and amplification on a
/// sifted key. Keys that still differ after reconciliation are reported
/// as an error, never returned.
pub fn distill_key(raw: &RawKeyPair, cfg: &KeyConfig) -> Result<KeyReport, QkdError> {
    let (estimate, key) = estimate_qber(raw, cfg.qber_mode)?;
    if key.is_empty() {
        return Err(QkdError::EmptyKey);
    }
    let hint = estimate.qber.max(cfg.min_qber_hint);
    let (reconciled, transcript) = cascade(&key, hint, &cfg.cascade, cfg.seed)?;
    let n = reconciled.len();
    // the oracle compares ground truth and reveals nothing; otherwise a
    // public hash of the reconciled keys is compared and charged
    let (consistent, verify_bits) = match cfg.qber_mode {
        QberMode::Oracle => (reconciled.alice == reconciled.bob, 0),
        QberMode::Sampled { .. } => {
            let seed = cfg.seed ^ 0x7665_7269_6679;
            let check = cfg.verify_bits as usize;
            (toeplitz_hash(&reconciled.alice, check, seed) == toeplitz_hash(&reconciled.bob, check, seed), cfg.verify_bits)
        }
    };
    if !consistent {
        return Err(QkdError::ResidualErrors { passes: transcript.passes });
    }
    let disclosed = transcript.recount() + verify_bits as u64;
    let ledger = KeyLedger::new(n, estimate.qber, disclosed, cfg.security_param)?;
    let pa_seed = cfg.seed ^ 0x7061_6d70;
    let alice_key = privacy_amplification(&reconciled.alice, ledger, pa_seed)?;
    let bob_key = privacy_amplification(&reconciled.bob, ledger, pa_seed)?;
    Ok(KeyReport {
        raw_length: raw.len(),
        estimate,
        reconciled_length: n,
        transcript,
        verify_bits,
        alice_key,
        bob_key,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quoted_scenario_distills_identical_keys() {
        let mut lens = Vec::new();
        for seed in 0..20 {
            let raw = RawKeyPair::with_planted_errors(417, 20, seed);
            let r = distill_key(&raw, &KeyConfig { seed, ..KeyConfig::default() }).unwrap();
            assert!(r.keys_identical());
            assert_eq!(r.alice_key.ledger.disclosed_bits, r.transcript.recount());
            lens.push(r.alice_key.len());
        }
        assert!(lens.iter().all(|l| (120..=260).contains(l)), "{lens:?}");
    }

    #[test]
    fn sampled_mode_charges_verification() {
        let raw = RawKeyPair::with_planted_errors(4000, 120, 5);
        let cfg = KeyConfig { qber_mode: QberMode::Sampled { fraction: 0.2, seed: 1 }, ..KeyConfig::default() };
        let r = distill_key(&raw, &cfg).unwrap();
        assert!(r.keys_identical());
        assert_eq!(r.reconciled_length, 3200);
        assert_eq!(r.verify_bits, 16);
        assert_eq!(r.alice_key.ledger.disclosed_bits, r.transcript.recount() + 16);
    }

    #[test]
    fn noisy_key_is_exhausted() {
        let raw = RawKeyPair::with_planted_errors(400, 56, 1);
        assert!(matches!(distill_key(&raw, &KeyConfig::default()), Err(QkdError::KeyExhausted { .. })));
    }

    #[test]
    fn perfect_key_keeps_most_bits() {
        let raw = RawKeyPair::with_planted_errors(1000, 0, 2);
        let r = distill_key(&raw, &KeyConfig::default()).unwrap();
        assert!(r.keys_identical());
        assert_eq!(r.alice_key.ledger.qber, 0.0);
        assert!(r.alice_key.len() > 900);
    }

    #[test]
    fn report_exports() {
        let raw = RawKeyPair::with_planted_errors(2000, 40, 3);
        let r = distill_key(&raw, &KeyConfig::default()).unwrap();
        let t: toml::Table = r.to_toml().parse().unwrap();
        assert_eq!(t["raw_length"].as_integer(), Some(2000));
        assert!(r.to_string().contains("final key"));
    }
}
