use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QkdError;

pub fn binary_entropy(q: f64) -> Result<f64, QkdError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(QkdError::InvalidParameter("binary entropy argument"));
    }
    if q == 0.0 || q == 1.0 {
        return Ok(0.0);
    }
    Ok(-q * q.log2() - (1.0 - q) * (1.0 - q).log2())
}

/// Inputs to the final-length formula and its result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyLedger {
    /// Length of the reconciled key fed to the hash.
    pub raw_length: usize,
    pub qber: f64,
    /// `h₂(qber)`.
    pub entropy_bound: f64,
    /// Parity and verification bits revealed about the reconciled key.
    pub disclosed_bits: u64,
    pub security_param: u64,
}

impl KeyLedger {
    pub fn new(raw_length: usize, qber: f64, disclosed_bits: u64, security_param: u64) -> Result<Self, QkdError> {
        Ok(Self { raw_length, qber, entropy_bound: binary_entropy(qber)?, disclosed_bits, security_param })
    }

    /// `floor(n (1 - h₂(q)) - disclosed - s)`, possibly negative.
    pub fn final_length(&self) -> i64 {
        (self.raw_length as f64 * (1.0 - self.entropy_bound) - self.disclosed_bits as f64 - self.security_param as f64)
            .floor() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecretKey {
    pub bits: Vec<u8>,
    pub ledger: KeyLedger,
    pub seed: u64,
}

impl SecretKey {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn to_hex(&self) -> String {
        self.bits
            .chunks(8)
            .map(|c| {
                let byte = c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | (b << (7 - i)));
                format!("{byte:02x}")
            })
            .collect()
    }
}

/// `m` output bits of the Toeplitz matrix drawn from `seed` applied to `bits`.
/// Row `i` column `j` of the matrix is `r[i - j + n - 1]`.
pub fn toeplitz_hash(bits: &[u8], m: usize, seed: u64) -> Vec<u8> {
    let n = bits.len();
    if n == 0 || m == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r: Vec<u8> = (0..n + m - 1).map(|_| rng.random_range(0..2u8)).collect();
    (0..m)
        .map(|i| {
            let diag = &r[i..i + n];
            // column j uses r[i + n - 1 - j]
            bits.iter().zip(diag.iter().rev()).fold(0u8, |acc, (&x, &t)| acc ^ (x & t))
        })
        .collect()
}

/// Compresses the reconciled key to the ledger's final length.
pub fn privacy_amplification(bits: &[u8], ledger: KeyLedger, seed: u64) -> Result<SecretKey, QkdError> {
    if bits.len() != ledger.raw_length {
        return Err(QkdError::InvalidParameter("ledger length"));
    }
    let m = ledger.final_length();
    if m <= 0 {
        return Err(QkdError::KeyExhausted { final_length: m });
    }
    Ok(SecretKey { bits: toeplitz_hash(bits, m as usize, seed), ledger, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qkd::RawKeyPair;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn entropy_values() {
        assert_eq!(binary_entropy(0.5).unwrap(), 1.0);
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.048).unwrap() - 0.2779).abs() < 1e-4);
        assert!(binary_entropy(1.1).is_err());
        assert!(binary_entropy(f64::NAN).is_err());
    }

    #[test]
    fn full_capacity_keeps_every_bit() {
        let key = RawKeyPair::with_planted_errors(256, 0, 1).alice;
        let l = KeyLedger::new(256, 0.0, 0, 0).unwrap();
        assert_eq!(privacy_amplification(&key, l, 3).unwrap().len(), 256);
    }

    #[test]
    fn random_bits_are_exhausted() {
        let key = vec![1u8; 100];
        let l = KeyLedger::new(100, 0.5, 0, 0).unwrap();
        assert_eq!(l.final_length(), 0);
        assert_eq!(privacy_amplification(&key, l, 3).unwrap_err(), QkdError::KeyExhausted { final_length: 0 });
    }

    #[test]
    fn quoted_scenario_length() {
        let l = KeyLedger::new(397, 0.048, 0, 30).unwrap();
        assert_eq!(l.final_length(), (397.0 * (1.0 - binary_entropy(0.048).unwrap()) - 30.0f64).floor() as i64);
    }

    #[test]
    fn hash_matches_matrix_definition() {
        let bits = [1u8, 0, 1, 1, 0];
        let (n, m, seed) = (bits.len(), 3, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<u8> = (0..n + m - 1).map(|_| rng.random_range(0..2u8)).collect();
        let expect: Vec<u8> = (0..m).map(|i| (0..n).fold(0, |acc, j| acc ^ (r[i + n - 1 - j] & bits[j]))).collect();
        assert_eq!(toeplitz_hash(&bits, m, seed), expect);
    }

    #[test]
    fn hash_is_linear() {
        let a = RawKeyPair::with_planted_errors(300, 0, 1).alice;
        let b = RawKeyPair::with_planted_errors(300, 0, 2).alice;
        let x: Vec<u8> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
        let ha = toeplitz_hash(&a, 100, 9);
        let hb = toeplitz_hash(&b, 100, 9);
        let hx: Vec<u8> = ha.iter().zip(&hb).map(|(p, q)| p ^ q).collect();
        assert_eq!(toeplitz_hash(&x, 100, 9), hx);
    }

    #[test]
    fn different_seeds_agree_on_half_the_bits() {
        let key = RawKeyPair::with_planted_errors(2000, 0, 5).alice;
        let m = 1000;
        let same = toeplitz_hash(&key, m, 1);
        assert_eq!(same, toeplitz_hash(&key, m, 1));
        let other = toeplitz_hash(&key, m, 2);
        let agree = same.iter().zip(&other).filter(|(a, b)| a == b).count() as f64;
        let sigma = (m as f64 * 0.25).sqrt();
        assert!((agree - m as f64 / 2.0).abs() < 3.0 * sigma, "{agree}");
    }

    #[test]
    fn hex_export() {
        let k = SecretKey { bits: vec![1, 0, 1, 0, 0, 0, 0, 1, 1], ledger: KeyLedger::new(9, 0.0, 0, 0).unwrap(), seed: 0 };
        assert_eq!(k.to_hex(), "a180");
    }

    proptest! {
        #[test]
        fn final_length_is_monotone(n in 1usize..5000, q1 in 0.0f64..0.5, dq in 0.0f64..0.5, d in 0u64..500, dd in 0u64..500) {
            let base = KeyLedger::new(n, q1, d, 30).unwrap().final_length();
            prop_assert!(KeyLedger::new(n, (q1 + dq).min(0.5), d, 30).unwrap().final_length() <= base);
            prop_assert!(KeyLedger::new(n, q1, d + dd, 30).unwrap().final_length() <= base);
        }
    }
}
