//! Deterministic randomness.
//!
//! Every random stream is derived from a root seed and a label:
//! `SHA-256(root_le64 || label)` seeds a ChaCha20 generator, whose output is
//! the counter-mode keystream. No component reads ambient entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha20Rng;

/// Opens the stream named `label` under `root`.
pub fn stream(root: u64, label: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

/// Derives a child seed, for handing to components that take a `u64` seed.
pub fn child_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(b"/seed/");
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Uniform random permutation of `0..len` (Fisher-Yates over the stream).
pub fn permutation(rng: &mut StreamRng, len: usize) -> Vec<u32> {
    use rand::seq::SliceRandom;
    assert!(len <= u32::MAX as usize);
    let mut p: Vec<u32> = (0..len as u32).collect();
    p.shuffle(rng);
    p
}
