//! Cascade reconciliation with fixed-length segments.
//!
//! Keys are processed in blocks (the tail shorter than a block is corrected
//! as one block). Each pass permutes the block, cuts it into segments,
//! compares segment parities and binary-searches every odd segment. A bit
//! corrected in a later pass flips the parity of the segments that contain it
//! in every other pass, and those are searched again until no odd segment
//! remains. After each pass the two sides compare a 64-bit checksum; a block
//! stops as soon as checksums agree.
//!
//! Every parity the reference side reveals is appended to the transcript, so
//! `leaked_bits == transcript.len()`. Checksum bits are counted separately.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::rng;

/// `2^64 − 59`, the largest prime below `2^64`.
const CHECKSUM_PRIME: u64 = 0xFFFF_FFFF_FFFF_FFC5;
pub const CHECKSUM_BITS: usize = 64;

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeConfig {
    pub block_bits: usize,
    pub segment_bits: usize,
    pub max_passes: usize,
    pub permutation_seed: u64,
    /// Compare a disclosed checksum after each pass. When off, a block stops
    /// after a pass that finds no odd segment, and `residual_mismatch` is
    /// taken from a direct comparison (only meaningful in tests).
    #[serde(default = "default_true")]
    pub checksum: bool,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            block_bits: 1 << 20,
            segment_bits: 600,
            max_passes: 3,
            permutation_seed: 0,
            checksum: true,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_bits < 2 || self.max_passes == 0 || self.block_bits < self.segment_bits {
            return Err(Error::invalid(format!(
                "need segment_bits >= 2, max_passes >= 1 and block_bits >= segment_bits: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One revealed parity bit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParityDisclosure {
    pub block: usize,
    pub pass: usize,
    pub segment: usize,
    pub parity: bool,
    /// Halves (`L`/`R`) leading from the segment to the disclosed
    /// sub-block; empty for a whole-segment parity. An interval `[lo, hi)` of
    /// the permuted segment splits at `lo + (hi - lo) / 2`.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeResult {
    pub corrected_peer_key: BitString,
    /// Parity bits disclosed.
    pub leaked_bits: usize,
    /// Checksum bits disclosed.
    pub checksum_bits: usize,
    pub passes_used: usize,
    pub corrections: usize,
    pub residual_mismatch: bool,
    pub transcript: Vec<ParityDisclosure>,
}

impl CascadeResult {
    /// Everything the reference side disclosed, the `leak_EC` of the key.
    pub fn total_leak(&self) -> usize {
        self.leaked_bits + self.checksum_bits
    }

    /// `leaked_bits / (len · H(e))`.
    pub fn efficiency(&self, len: usize, error_rate: f64) -> f64 {
        self.leaked_bits as f64
            / (len as f64 * crate::security::binary_entropy_unchecked(error_rate))
    }
}

/// Keyed polynomial hash of the bit words, mod `2^64 − 59`.
fn checksum(bits: &BitString, key: u64) -> u64 {
    let p = CHECKSUM_PRIME as u128;
    let base = (key as u128 % (p - 2)) + 2;
    let mut h: u128 = bits.len() as u128 % p;
    for &w in bits.words() {
        h = (h * base + (w as u128 % p)) % p;
    }
    h as u64
}

struct Pass {
    /// Permuted index → block position.
    order: Vec<u32>,
    /// Block position → permuted index.
    index: Vec<u32>,
    /// Known parity difference of each segment.
    odd: Vec<bool>,
}

struct BlockRun<'a> {
    block: usize,
    a: &'a BitString,
    b: BitString,
    seg: usize,
    passes: Vec<Pass>,
    transcript: Vec<ParityDisclosure>,
    corrections: usize,
}

impl BlockRun<'_> {
    fn parity(bits: &BitString, positions: &[u32]) -> bool {
        positions
            .iter()
            .fold(false, |acc, &p| acc ^ bits.get(p as usize))
    }

    fn segment_range(&self, pass: usize, segment: usize) -> std::ops::Range<usize> {
        let len = self.passes[pass].order.len();
        segment * self.seg..((segment + 1) * self.seg).min(len)
    }

    fn disclose(&mut self, pass: usize, segment: usize, parity: bool, path: &str) {
        self.transcript.push(ParityDisclosure {
            block: self.block,
            pass,
            segment,
            parity,
            path: path.to_string(),
        });
    }

    /// Binary search in a segment known to hold an odd number of errors.
    fn search(&mut self, pass: usize, segment: usize) {
        let range = self.segment_range(pass, segment);
        let mut lo = range.start;
        let mut hi = range.end;
        let mut path = String::new();
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let left = &self.passes[pass].order[lo..mid];
            let pa = Self::parity(self.a, left);
            let pb = Self::parity(&self.b, left);
            self.disclose(pass, segment, pa, &format!("{path}L"));
            if pa != pb {
                hi = mid;
                path.push('L');
            } else {
                lo = mid;
                path.push('R');
            }
        }
        let pos = self.passes[pass].order[lo] as usize;
        self.correct(pos);
    }

    /// Flips `pos` and toggles the parity difference of its segment in every
    /// pass run so far.
    fn correct(&mut self, pos: usize) {
        self.b.flip(pos);
        self.corrections += 1;
        for pass in &mut self.passes {
            let s = pass.index[pos] as usize / self.seg;
            pass.odd[s] = !pass.odd[s];
        }
    }

    fn next_odd(&self) -> Option<(usize, usize)> {
        self.passes
            .iter()
            .enumerate()
            .find_map(|(q, p)| p.odd.iter().position(|&o| o).map(|s| (q, s)))
    }

    fn run_pass(&mut self, pass: usize, seed: u64) -> usize {
        let len = self.b.len();
        let label = format!("cascade/block{}/pass{}", self.block, pass);
        let order = rng::permutation(&mut rng::stream(seed, &label), len);
        let mut index = vec![0u32; len];
        for (i, &p) in order.iter().enumerate() {
            index[p as usize] = i as u32;
        }
        let segments = len.div_ceil(self.seg);
        self.passes.push(Pass {
            order,
            index,
            odd: vec![false; segments],
        });
        for s in 0..segments {
            let range = self.segment_range(pass, s);
            let positions = &self.passes[pass].order[range];
            let pa = Self::parity(self.a, positions);
            let pb = Self::parity(&self.b, positions);
            self.passes[pass].odd[s] = pa != pb;
            self.disclose(pass, s, pa, "");
        }
        let before = self.corrections;
        while let Some((q, s)) = self.next_odd() {
            self.search(q, s);
        }
        self.corrections - before
    }
}

/// Reconciles `key_b` towards `key_a`.
pub fn reconcile(
    key_a: &BitString,
    key_b: &BitString,
    cfg: &CascadeConfig,
) -> Result<CascadeResult> {
    cfg.validate()?;
    if key_a.len() != key_b.len() {
        return Err(Error::invalid(format!(
            "key lengths differ: {} vs {}",
            key_a.len(),
            key_b.len()
        )));
    }
    let len = key_a.len();
    let full = len / cfg.block_bits;
    let mut bounds: Vec<(usize, usize)> = (0..full)
        .map(|i| (i * cfg.block_bits, cfg.block_bits))
        .collect();
    if len % cfg.block_bits != 0 {
        bounds.push((full * cfg.block_bits, len % cfg.block_bits));
    }

    let mut corrected = BitString::default();
    let mut transcript = Vec::new();
    let mut checksum_bits = 0;
    let mut passes_used = 0;
    let mut corrections = 0;
    let mut residual = false;
    for (block, &(start, blen)) in bounds.iter().enumerate() {
        let a = key_a.slice(start, blen);
        let mut run = BlockRun {
            block,
            a: &a,
            b: key_b.slice(start, blen),
            seg: cfg.segment_bits,
            passes: Vec::new(),
            transcript: Vec::new(),
            corrections: 0,
        };
        let mut used = 0;
        let mut block_ok = false;
        for pass in 0..cfg.max_passes {
            let fixed = run.run_pass(pass, cfg.permutation_seed);
            used = pass + 1;
            if cfg.checksum {
                let key = rng::child_seed(
                    cfg.permutation_seed,
                    &format!("cascade/checksum/{block}/{pass}"),
                );
                checksum_bits += CHECKSUM_BITS;
                if checksum(&a, key) == checksum(&run.b, key) {
                    block_ok = true;
                    break;
                }
            } else if fixed == 0 {
                break;
            }
        }
        if !cfg.checksum {
            block_ok = run.b == a;
        }
        residual |= !block_ok;
        passes_used = passes_used.max(used);
        corrections += run.corrections;
        transcript.append(&mut run.transcript);
        corrected.extend(&run.b);
    }
    Ok(CascadeResult {
        corrected_peer_key: corrected,
        leaked_bits: transcript.len(),
        checksum_bits,
        passes_used,
        corrections,
        residual_mismatch: residual,
        transcript,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_key(rng: &mut impl Rng, len: usize) -> BitString {
        BitString::from_bools((0..len).map(|_| rng.gen::<bool>()))
    }

    fn with_flips(rng: &mut impl Rng, key: &BitString, rate: f64) -> BitString {
        let mut out = key.clone();
        for i in 0..key.len() {
            if rng.gen_bool(rate) {
                out.flip(i);
            }
        }
        out
    }

    #[test]
    fn identical_keys_disclose_one_parity_per_segment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_key(&mut rng, 1200);
        let r = reconcile(&a, &a, &CascadeConfig::default()).unwrap();
        assert_eq!(r.leaked_bits, 2);
        assert_eq!(r.passes_used, 1);
        assert_eq!(r.corrections, 0);
        assert!(!r.residual_mismatch);
        assert_eq!(r.checksum_bits, 64);
        assert_eq!(r.total_leak(), 66);
    }

    /// Number of halvings the search takes to isolate permuted index `idx`
    /// in a segment `[0, len)` when the left half is `[lo, lo + (hi-lo)/2)`.
    fn search_depth(mut lo: usize, mut hi: usize, idx: usize) -> usize {
        let mut depth = 0;
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if idx < mid {
                hi = mid;
            } else {
                lo = mid;
            }
            depth += 1;
        }
        depth
    }

    #[test]
    fn single_error_costs_one_plus_search_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = CascadeConfig::default();
        for flip in [0usize, 17, 299, 300, 599] {
            let a = random_key(&mut rng, 600);
            let mut b = a.clone();
            b.flip(flip);
            let r = reconcile(&a, &b, &cfg).unwrap();
            assert_eq!(r.corrected_peer_key, a);
            assert_eq!(r.passes_used, 1);
            let order = rng::permutation(
                &mut rng::stream(cfg.permutation_seed, "cascade/block0/pass0"),
                600,
            );
            let idx = order.iter().position(|&p| p as usize == flip).unwrap();
            let depth = search_depth(0, 600, idx);
            assert_eq!(r.leaked_bits, 1 + depth);
            assert!(r.leaked_bits <= 1 + 10);
        }
    }

    #[test]
    fn transcript_replay_matches_reference_parities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_key(&mut rng, 5000);
        let b = with_flips(&mut rng, &a, 0.01);
        let cfg = CascadeConfig {
            permutation_seed: 9,
            ..CascadeConfig::default()
        };
        let r = reconcile(&a, &b, &cfg).unwrap();
        assert_eq!(r.leaked_bits, r.transcript.len());
        assert!(r.corrections > 0);
        // Re-derive every disclosed parity from key A and the announced
        // permutations.
        let orders: Vec<Vec<u32>> = (0..r.passes_used)
            .map(|p| {
                rng::permutation(
                    &mut rng::stream(9, &format!("cascade/block0/pass{p}")),
                    5000,
                )
            })
            .collect();
        for d in &r.transcript {
            let mut lo = d.segment * 600;
            let mut hi = ((d.segment + 1) * 600).min(5000);
            for step in d.path.chars() {
                let mid = lo + (hi - lo) / 2;
                if step == 'L' {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let parity = orders[d.pass][lo..hi]
                .iter()
                .fold(false, |acc, &p| acc ^ a.get(p as usize));
            assert_eq!(parity, d.parity, "{d:?}");
        }
    }

    #[test]
    fn remainder_is_one_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_key(&mut rng, 25_000);
        let b = with_flips(&mut rng, &a, 0.002);
        let cfg = CascadeConfig {
            block_bits: 10_000,
            ..CascadeConfig::default()
        };
        let r = reconcile(&a, &b, &cfg).unwrap();
        assert_eq!(r.transcript.iter().map(|d| d.block).max(), Some(2));
        assert!(!r.residual_mismatch);
        assert_eq!(r.corrected_peer_key, a);
    }

    #[test]
    fn rejects_bad_input() {
        let a = BitString::zeros(10);
        assert!(reconcile(&a, &BitString::zeros(11), &CascadeConfig::default()).is_err());
        let cfg = CascadeConfig {
            segment_bits: 1,
            ..CascadeConfig::default()
        };
        assert!(reconcile(&a, &a, &cfg).is_err());
    }

    #[test]
    fn checksum_off_uses_quiet_pass_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_key(&mut rng, 20_000);
        let b = with_flips(&mut rng, &a, 0.003);
        let cfg = CascadeConfig {
            checksum: false,
            ..CascadeConfig::default()
        };
        let r = reconcile(&a, &b, &cfg).unwrap();
        assert_eq!(r.checksum_bits, 0);
        assert_eq!(r.residual_mismatch, r.corrected_peer_key != a);
    }

    #[test]
    fn efficiency_over_operating_range() {
        for (seed, rate) in [(10u64, 0.001), (11, 0.002), (12, 0.005), (13, 0.01)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_key(&mut rng, 1_000_000);
            let b = with_flips(&mut rng, &a, rate);
            let cfg = CascadeConfig {
                permutation_seed: seed,
                ..CascadeConfig::default()
            };
            let r = reconcile(&a, &b, &cfg).unwrap();
            let f = r.efficiency(a.len(), rate);
            eprintln!(
                "rate {rate}: f = {f:.4}, passes {}, residual {}",
                r.passes_used, r.residual_mismatch
            );
            assert!((1.0..=1.30).contains(&f), "f = {f} at rate {rate}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn success_means_exact_agreement(seed in any::<u64>(), len in 600usize..6000, rate in 0.0f64..0.02) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_key(&mut rng, len);
            let b = with_flips(&mut rng, &a, rate);
            let cfg = CascadeConfig { permutation_seed: seed, ..CascadeConfig::default() };
            let r = reconcile(&a, &b, &cfg).unwrap();
            prop_assert!(r.passes_used <= 3);
            prop_assert!(r.leaked_bits >= len.div_ceil(600));
            if !r.residual_mismatch {
                prop_assert_eq!(&r.corrected_peer_key, &a);
            }
        }

        #[test]
        fn permutation_round_trips(seed in any::<u64>(), len in 1usize..5000) {
            let order = rng::permutation(&mut rng::stream(seed, "cascade/block0/pass0"), len);
            let mut index = vec![0u32; len];
            for (i, &p) in order.iter().enumerate() { index[p as usize] = i as u32; }
            for p in 0..len { prop_assert_eq!(order[index[p] as usize] as usize, p); }
        }
    }
}
