use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sift::RawKeyPair;
use super::QkdError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub passes: u32,
    /// First-pass block size is `ceil(k1_factor / qber_hint)`.
    pub k1_factor: f64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self { passes: 4, k1_factor: 0.73 }
    }
}

/// One parity value revealed by Alice: the parity of positions
/// `start..end` of the pass-`pass` permutation of her key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityReply {
    pub pass: u32,
    pub start: u32,
    pub end: u32,
    pub parity: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationTranscript {
    pub passes: u32,
    pub block_sizes: Vec<usize>,
    /// Public seed of each pass permutation; pass 0 is unshuffled.
    pub shuffle_seeds: Vec<u64>,
    pub parity_bits_disclosed: u64,
    pub blocks_corrected: u64,
    pub replies: Vec<ParityReply>,
}

impl ReconciliationTranscript {
    /// Independent count of the parity bits in the message log.
    pub fn recount(&self) -> u64 {
        self.replies.len() as u64
    }

    pub fn dump(&self) -> String {
        let mut s = String::from("pass,start,end,parity\n");
        for r in &self.replies {
            writeln!(s, "{},{},{},{}", r.pass, r.start, r.end, r.parity).unwrap();
        }
        s
    }
}

/// The permutations shared by both parties for one reconciliation.
#[derive(Debug, Clone)]
pub struct Permutations {
    perms: Vec<Vec<u32>>,
    seeds: Vec<u64>,
}

impl Permutations {
    pub fn new(n: usize, passes: u32, seed: u64) -> Self {
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut perms = Vec::with_capacity(passes as usize);
        let mut seeds = Vec::with_capacity(passes as usize);
        for p in 0..passes {
            let mut perm: Vec<u32> = (0..n as u32).collect();
            let s = master.next_u64();
            if p > 0 {
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
            }
            perms.push(perm);
            seeds.push(if p > 0 { s } else { 0 });
        }
        Self { perms, seeds }
    }

    fn parity(&self, key: &[u8], pass: usize, start: usize, end: usize) -> u8 {
        self.perms[pass][start..end].iter().fold(0, |acc, &i| acc ^ key[i as usize])
    }
}

/// Alice's side of the public channel: answers parity queries and logs
/// each reply.
pub trait ParitySource {
    fn parity(&mut self, pass: u32, start: u32, end: u32) -> u8;
}

pub struct AliceEndpoint<'a> {
    key: &'a [u8],
    perms: &'a Permutations,
    pub log: Vec<ParityReply>,
}

impl<'a> AliceEndpoint<'a> {
    pub fn new(key: &'a [u8], perms: &'a Permutations) -> Self {
        Self { key, perms, log: Vec::new() }
    }
}

impl ParitySource for AliceEndpoint<'_> {
    fn parity(&mut self, pass: u32, start: u32, end: u32) -> u8 {
        let parity = self.perms.parity(self.key, pass as usize, start as usize, end as usize);
        self.log.push(ParityReply { pass, start, end, parity });
        parity
    }
}

/// Bob's side: drives the protocol and corrects his key in place.
struct BobDriver<'a, S: ParitySource> {
    key: &'a mut [u8],
    perms: &'a Permutations,
    inverse: Vec<Vec<u32>>,
    sizes: Vec<usize>,
    known: HashMap<(u32, u32, u32), u8>,
    alice: &'a mut S,
    corrected: u64,
}

impl<S: ParitySource> BobDriver<'_, S> {
    fn alice_parity(&mut self, pass: usize, start: usize, end: usize) -> u8 {
        let k = (pass as u32, start as u32, end as u32);
        if let Some(&p) = self.known.get(&k) {
            return p;
        }
        let p = self.alice.parity(k.0, k.1, k.2);
        self.known.insert(k, p);
        p
    }

    fn block_range(&self, pass: usize, block: usize) -> (usize, usize) {
        let k = self.sizes[pass];
        (block * k, ((block + 1) * k).min(self.key.len()))
    }

    fn mismatched(&mut self, pass: usize, block: usize) -> bool {
        let (s, e) = self.block_range(pass, block);
        self.alice_parity(pass, s, e) != self.perms.parity(self.key, pass, s, e)
    }

    /// Bisects an odd-parity block down to one bit; the parity of each
    /// right half follows from the enclosing parity without a query.
    fn bisect(&mut self, pass: usize, mut s: usize, mut e: usize) -> usize {
        let mut whole = self.alice_parity(pass, s, e);
        while e - s > 1 {
            let m = s + (e - s).div_ceil(2);
            let left = self.alice_parity(pass, s, m);
            let right = whole ^ left;
            self.known.entry((pass as u32, m as u32, e as u32)).or_insert(right);
            if left != self.perms.parity(self.key, pass, s, m) {
                e = m;
                whole = left;
            } else {
                s = m;
                whole = right;
            }
        }
        self.perms.perms[pass][s] as usize
    }

    fn run(&mut self) {
        let n = self.key.len();
        let mut queue = VecDeque::new();
        let mut total = 0u8;
        for pass in 0..self.sizes.len() {
            let blocks = n.div_ceil(self.sizes[pass]);
            let mut acc = 0u8;
            for b in 0..blocks {
                let (s, e) = self.block_range(pass, b);
                if pass > 0 && b == blocks - 1 {
                    // every pass permutes the same key, so its total parity
                    // from pass 0 fixes the last block
                    self.known.insert((pass as u32, s as u32, e as u32), total ^ acc);
                }
                acc ^= self.alice_parity(pass, s, e);
                if self.mismatched(pass, b) {
                    queue.push_back((pass, b));
                }
            }
            if pass == 0 {
                total = acc;
            }
            while let Some((p, b)) = queue.pop_front() {
                if !self.mismatched(p, b) {
                    continue;
                }
                let (s, e) = self.block_range(p, b);
                let bit = self.bisect(p, s, e);
                self.key[bit] ^= 1;
                self.corrected += 1;
                // the flip toggles the parity of the block holding `bit` in
                // every other pass run so far
                for q in 0..=pass {
                    if q != p {
                        let qb = self.inverse[q][bit] as usize / self.sizes[q];
                        if self.mismatched(q, qb) {
                            queue.push_back((q, qb));
                        }
                    }
                }
            }
        }
    }
}

pub fn first_block_size(qber_hint: f64, k1_factor: f64) -> usize {
    ((k1_factor / qber_hint).ceil() as usize).max(1)
}

/// Corrects Bob's bits towards Alice's. Residual errors are possible when
/// some block holds an even number of errors in every pass; the caller
/// checks for them.
pub fn cascade(
    raw: &RawKeyPair,
    qber_hint: f64,
    cfg: &CascadeConfig,
    seed: u64,
) -> Result<(RawKeyPair, ReconciliationTranscript), QkdError> {
    if !(qber_hint > 0.0 && qber_hint < 0.15) {
        return Err(QkdError::QberHintOutOfRange(qber_hint));
    }
    if cfg.passes == 0 || !(cfg.k1_factor > 0.0) {
        return Err(QkdError::InvalidParameter("cascade passes/k1"));
    }
    let n = raw.len();
    let perms = Permutations::new(n, cfg.passes, seed);
    let k1 = first_block_size(qber_hint, cfg.k1_factor);
    let sizes: Vec<usize> = (0..cfg.passes).map(|p| k1.saturating_mul(1 << p.min(40)).min(n).max(1)).collect();
    let inverse = perms
        .perms
        .iter()
        .map(|perm| {
            let mut inv = vec![0u32; n];
            for (pos, &i) in perm.iter().enumerate() {
                inv[i as usize] = pos as u32;
            }
            inv
        })
        .collect();
    let mut out = raw.clone();
    let mut alice = AliceEndpoint::new(&raw.alice, &perms);
    let corrected = {
        let mut bob = BobDriver {
            key: &mut out.bob,
            perms: &perms,
            inverse,
            sizes: sizes.clone(),
            known: HashMap::new(),
            alice: &mut alice,
            corrected: 0,
        };
        if n > 0 {
            bob.run();
        }
        bob.corrected
    };
    let replies = alice.log;
    let transcript = ReconciliationTranscript {
        passes: cfg.passes,
        block_sizes: sizes,
        shuffle_seeds: perms.seeds.clone(),
        parity_bits_disclosed: replies.len() as u64,
        blocks_corrected: corrected,
        replies,
    };
    Ok((out, transcript))
}
