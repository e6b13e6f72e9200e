//! Inputs shared by the benchmarks.

use qecom_core::bits::BitString;
use qecom_core::rng;
use rand::Rng;

pub fn random_bits(len: usize, seed: u64) -> BitString {
    let mut r = rng::stream(seed, "bench/bits");
    BitString::from_bools((0..len).map(|_| r.gen::<bool>()))
}

/// A nonzero `len`-bit string.
pub fn nonzero_bits(len: usize, seed: u64) -> BitString {
    let mut b = random_bits(len, seed);
    if b.is_zero() {
        b.flip(0);
    }
    b
}

/// `key` with each bit flipped with probability `rate`.
pub fn noisy_copy(key: &BitString, rate: f64, seed: u64) -> BitString {
    let mut r = rng::stream(seed, "bench/noise");
    let mut out = key.clone();
    for i in 0..key.len() {
        if r.gen_bool(rate) {
            out.flip(i);
        }
    }
    out
}
