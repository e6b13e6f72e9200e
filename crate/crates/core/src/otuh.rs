//! One-time universal hashing with LFSR-generated Toeplitz matrices.
//!
//! A key is three `n`-bit strings `(x2, x3, x4)`. `x2` seeds a random
//! irreducible `p(x) = x^n + p_(n-1) x^(n-1) + … + p_0`, `x3` is the initial
//! register state `(a_n, …, a_1)` and `x4` is a one-time pad. The tag of a
//! message `x1` is `H x1 ⊕ x4` where column `j` of `H` is `W^j x3` and `W` is
//! the companion matrix with first row `(p_(n-1), …, p_0)` and ones on the
//! subdiagonal.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::gf2::{gen_irreducible, Gf2Poly};

/// `H x1` for the LFSR Toeplitz matrix of `poly` started from `init`.
///
/// Streams over the message: the register advances once per message bit and
/// is folded into the result whenever that bit is set, so `H` is never built.
pub fn lfsr_hash(message: &BitString, poly: &Gf2Poly, init: &BitString) -> Result<BitString> {
    let n = poly
        .degree()
        .filter(|&d| d >= 1)
        .ok_or_else(|| Error::invalid("hash polynomial must have degree at least 1"))?;
    if init.len() != n {
        return Err(Error::invalid(format!(
            "initial state has {} bits but the polynomial has degree {n}",
            init.len()
        )));
    }
    if message.is_empty() {
        return Err(Error::invalid("message must not be empty"));
    }
    if init.is_zero() {
        return Err(Error::invalid("initial state must not be all zero"));
    }
    // First row of W: bit i is p_(n-1-i).
    let row = BitString::from_bools((0..n).map(|i| poly.coeff(n - 1 - i)));
    let mut state = init.clone();
    let mut out = BitString::zeros(n);
    let m = message.len();
    for j in 0..m {
        if message.get(j) {
            out.xor_assign(&state);
        }
        if j + 1 < m {
            let first = row.and_parity(&state);
            state.shift_in_front(first);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureTag {
    pub bits: BitString,
}

impl SignatureTag {
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

/// Single-use hashing key.
///
/// A share may have an all-zero `x2` or `x3`; such a key cannot sign or
/// verify, but the XOR of two shares usually can.
///
/// Signing or verifying marks the key consumed; a second use fails with
/// [`Error::KeyReuse`]. A key instance is meant to be owned by one party.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureKeys {
    pub x2: BitString,
    pub x3: BitString,
    pub x4: BitString,
    #[serde(default)]
    consumed: bool,
}

impl SignatureKeys {
    pub fn new(x2: BitString, x3: BitString, x4: BitString) -> Result<Self> {
        let n = x2.len();
        if n < 2 || x3.len() != n || x4.len() != n {
            return Err(Error::invalid(format!(
                "key parts must share a length n >= 2 (got {}, {}, {})",
                x2.len(),
                x3.len(),
                x4.len()
            )));
        }
        Ok(SignatureKeys {
            x2,
            x3,
            x4,
            consumed: false,
        })
    }

    /// Splits a `3n`-bit block into `x2 || x3 || x4`.
    pub fn from_block(block: &BitString) -> Result<Self> {
        if block.len() % 3 != 0 {
            return Err(Error::invalid(format!(
                "key block of {} bits is not a multiple of 3",
                block.len()
            )));
        }
        let n = block.len() / 3;
        SignatureKeys::new(block.slice(0, n), block.slice(n, n), block.slice(2 * n, n))
    }

    pub fn to_block(&self) -> BitString {
        BitString::concat(&[&self.x2, &self.x3, &self.x4])
    }

    pub fn n(&self) -> usize {
        self.x2.len()
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    /// XOR of two key shares, as when a verifier combines its own key with
    /// the one forwarded by the other verifier.
    pub fn combine(&self, other: &SignatureKeys) -> Result<SignatureKeys> {
        if self.n() != other.n() {
            return Err(Error::invalid("key shares have different lengths"));
        }
        SignatureKeys::new(
            self.x2.xor(&other.x2),
            self.x3.xor(&other.x3),
            self.x4.xor(&other.x4),
        )
    }

    pub fn polynomial(&self) -> Result<Gf2Poly> {
        gen_irreducible(self.n(), &self.x2)
    }

    /// The tag these keys give `contract`, without touching the consumed flag.
    pub fn tag_for(&self, contract: &BitString) -> Result<SignatureTag> {
        let poly = self.polynomial()?;
        let mut bits = lfsr_hash(contract, &poly, &self.x3)?;
        bits.xor_assign(&self.x4);
        Ok(SignatureTag { bits })
    }

    fn consume(&mut self) -> Result<()> {
        if self.consumed {
            return Err(Error::KeyReuse);
        }
        self.consumed = true;
        Ok(())
    }
}

/// `Hash(C, k) = H C ⊕ x4`; consumes the keys.
pub fn sign(contract: &BitString, keys: &mut SignatureKeys) -> Result<SignatureTag> {
    if keys.is_consumed() {
        return Err(Error::KeyReuse);
    }
    let tag = keys.tag_for(contract)?;
    keys.consume()?;
    Ok(tag)
}

/// Recomputes the tag and compares; consumes the keys.
pub fn verify(contract: &BitString, tag: &SignatureTag, keys: &mut SignatureKeys) -> Result<bool> {
    if keys.is_consumed() {
        return Err(Error::KeyReuse);
    }
    if tag.len() != keys.n() {
        return Err(Error::invalid(format!(
            "tag has {} bits, keys expect {}",
            tag.len(),
            keys.n()
        )));
    }
    let expected = keys.tag_for(contract)?;
    keys.consume()?;
    Ok(expected == *tag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bits(s: &str) -> BitString {
        BitString::parse_binary(s).unwrap()
    }

    fn random_bits(rng: &mut impl Rng, n: usize) -> BitString {
        BitString::from_bools((0..n).map(|_| rng.gen::<bool>()))
    }

    fn random_nonzero(rng: &mut impl Rng, n: usize) -> BitString {
        loop {
            let b = random_bits(rng, n);
            if !b.is_zero() {
                return b;
            }
        }
    }

    /// Materializes W, builds every column W^j x3 by explicit matrix-vector
    /// products and multiplies H by the message.
    fn naive_hash(message: &BitString, poly: &Gf2Poly, init: &BitString) -> BitString {
        let n = poly.degree().unwrap();
        let mut w = vec![vec![false; n]; n];
        for (c, cell) in w[0].iter_mut().enumerate() {
            *cell = poly.coeff(n - 1 - c);
        }
        for r in 1..n {
            w[r][r - 1] = true;
        }
        let mut cols: Vec<Vec<bool>> = vec![init.iter().collect()];
        for j in 1..message.len() {
            let prev = &cols[j - 1];
            let next: Vec<bool> = (0..n)
                .map(|r| (0..n).fold(false, |acc, c| acc ^ (w[r][c] & prev[c])))
                .collect();
            cols.push(next);
        }
        BitString::from_bools(
            (0..n).map(|r| {
                (0..message.len()).fold(false, |acc, j| acc ^ (cols[j][r] & message.get(j)))
            }),
        )
    }

    #[test]
    fn single_bit_message_returns_init() {
        let poly = Gf2Poly::parse_desc("10011").unwrap();
        let init = bits("1011");
        assert_eq!(lfsr_hash(&bits("1"), &poly, &init).unwrap(), init);
    }

    #[test]
    fn zero_message_hashes_to_zero() {
        let poly = Gf2Poly::parse_desc("10011").unwrap();
        let out = lfsr_hash(&BitString::zeros(50), &poly, &bits("0110")).unwrap();
        assert!(out.is_zero());
    }

    #[test]
    fn small_worked_example_matches_matrix_oracle() {
        let poly = Gf2Poly::parse_desc("10011").unwrap();
        let init = bits("1000");
        let msg = bits("1011 0101");
        let oracle = naive_hash(&msg, &poly, &init);
        // Columns 1000 0100 0010 1001 1100 0110 1011 0101; the selected
        // ones (0, 2, 3, 5, 7) cancel.
        assert_eq!(oracle, bits("0000"));
        assert_eq!(lfsr_hash(&msg, &poly, &init).unwrap(), oracle);
        let msg2 = bits("1100 0000");
        assert_eq!(lfsr_hash(&msg2, &poly, &init).unwrap(), bits("1100"));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let poly = Gf2Poly::parse_desc("10011").unwrap();
        assert!(lfsr_hash(&bits("1"), &poly, &bits("100")).is_err());
        assert!(lfsr_hash(&BitString::default(), &poly, &bits("1000")).is_err());
        assert!(lfsr_hash(&bits("1"), &poly, &bits("0000")).is_err());
    }

    #[test]
    fn zero_contract_signs_to_mask() {
        let mut keys =
            SignatureKeys::new(bits("0111 1100"), bits("1000 0001"), bits("1010 0110")).unwrap();
        let tag = sign(&BitString::zeros(32), &mut keys).unwrap();
        assert_eq!(tag.bits, bits("1010 0110"));
    }

    #[test]
    fn worked_polynomial_tag_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let contract = random_bits(&mut rng, 16);
        let mut keys =
            SignatureKeys::new(bits("0111 1100"), bits("1000 0001"), BitString::zeros(8)).unwrap();
        let h = Gf2Poly::parse_desc("101111011").unwrap();
        assert_eq!(keys.polynomial().unwrap(), h);
        let tag = sign(&contract, &mut keys).unwrap();
        assert_eq!(tag.bits, naive_hash(&contract, &h, &bits("1000 0001")));
    }

    #[test]
    fn sign_verify_round_trip_and_reuse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let contract = random_bits(&mut rng, 200);
        let ka = SignatureKeys::new(
            random_nonzero(&mut rng, 32),
            random_nonzero(&mut rng, 32),
            random_bits(&mut rng, 32),
        )
        .unwrap();
        let mut signer = ka.clone();
        let mut verifier = ka.clone();
        let tag = sign(&contract, &mut signer).unwrap();
        assert!(signer.is_consumed());
        assert!(matches!(sign(&contract, &mut signer), Err(Error::KeyReuse)));
        assert!(verify(&contract, &tag, &mut verifier).unwrap());
        assert!(matches!(
            verify(&contract, &tag, &mut verifier),
            Err(Error::KeyReuse)
        ));

        let mut tampered = contract.clone();
        tampered.flip(17);
        let mut other = ka.clone();
        // A single flip is caught unless the hash of the difference vanishes.
        let diff = lfsr_hash(&contract.xor(&tampered), &ka.polynomial().unwrap(), &ka.x3).unwrap();
        assert_eq!(verify(&tampered, &tag, &mut other).unwrap(), diff.is_zero());

        let mut short = ka.clone();
        let bad = SignatureTag {
            bits: BitString::zeros(31),
        };
        assert!(matches!(
            verify(&contract, &bad, &mut short),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn key_block_round_trip_and_json() {
        let block = bits("0111 1100 1000 0001 0000 1111");
        let keys = SignatureKeys::from_block(&block).unwrap();
        assert_eq!(keys.n(), 8);
        assert_eq!(keys.to_block(), block);
        let json = serde_json::to_string(&keys).unwrap();
        assert_eq!(serde_json::from_str::<SignatureKeys>(&json).unwrap(), keys);
        assert!(SignatureKeys::from_block(&bits("0101")).is_err());
    }

    #[test]
    fn streaming_agrees_with_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..1000 {
            let n = rng.gen_range(2..=16);
            let m = rng.gen_range(1..=64);
            let keys = SignatureKeys::new(
                random_nonzero(&mut rng, n),
                random_nonzero(&mut rng, n),
                random_bits(&mut rng, n),
            )
            .unwrap();
            let poly = keys.polynomial().unwrap();
            let msg = random_bits(&mut rng, m);
            assert_eq!(
                lfsr_hash(&msg, &poly, &keys.x3).unwrap(),
                naive_hash(&msg, &poly, &keys.x3)
            );
        }
    }

    #[test]
    fn collision_rate_respects_bound() {
        // Fixed messages differing in one bit; count tag collisions over
        // uniformly random nonzero (x2, x3).
        let (n, m) = (8usize, 16usize);
        let mut rng = ChaCha8Rng::seed_from_u64(1_000_003);
        let c1 = random_bits(&mut rng, m);
        let mut c2 = c1.clone();
        c2.flip(5);
        let diff = c1.xor(&c2);
        let trials = 1_000_000u32;
        // One polynomial per nonzero x2 value, computed up front.
        let polys: Vec<Gf2Poly> = (1u32..1 << n)
            .map(|v| {
                gen_irreducible(
                    n,
                    &BitString::from_bools((0..n).rev().map(|i| v >> i & 1 == 1)),
                )
                .unwrap()
            })
            .collect();
        let mut collisions = 0u32;
        for _ in 0..trials {
            let poly = &polys[rng.gen_range(0..polys.len())];
            let x3 = random_nonzero(&mut rng, n);
            if lfsr_hash(&diff, poly, &x3).unwrap().is_zero() {
                collisions += 1;
            }
        }
        let p = collisions as f64 / trials as f64;
        let sd = (p * (1.0 - p) / trials as f64).sqrt();
        let bound = m as f64 * 2f64.powi(1 - n as i32);
        assert!(p - 3.0 * sd <= bound, "collision rate {p} exceeds {bound}");
    }

    proptest! {
        #[test]
        fn hash_is_linear(seed in any::<u64>(), n in 2usize..24, m in 1usize..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poly = gen_irreducible(n, &random_nonzero(&mut rng, n)).unwrap();
            let init = random_nonzero(&mut rng, n);
            let a = random_bits(&mut rng, m);
            let b = random_bits(&mut rng, m);
            let lhs = lfsr_hash(&a.xor(&b), &poly, &init).unwrap();
            let rhs = lfsr_hash(&a, &poly, &init).unwrap().xor(&lfsr_hash(&b, &poly, &init).unwrap());
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn columns_follow_companion_recurrence(seed in any::<u64>(), n in 2usize..16, j in 0usize..40) {
            // Column j is the hash of the j-th unit vector; column j+1 must be
            // W applied to it.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poly = gen_irreducible(n, &random_nonzero(&mut rng, n)).unwrap();
            let init = random_nonzero(&mut rng, n);
            let unit = |k: usize| { let mut e = BitString::zeros(k + 1); e.set(k, true); e };
            let col = lfsr_hash(&unit(j), &poly, &init).unwrap();
            let next = lfsr_hash(&unit(j + 1), &poly, &init).unwrap();
            let first = (0..n).fold(false, |acc, c| acc ^ (poly.coeff(n - 1 - c) & col.get(c)));
            let mut expect = col.clone();
            expect.shift_in_front(first);
            prop_assert_eq!(next, expect);
        }
    }
}
