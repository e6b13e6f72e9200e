//! Polynomials over GF(2).
//!
//! Coefficients are packed into 64-bit words with bit `k` holding the
//! coefficient of `x^k`. The external text form is degree-descending: the
//! string `101111011` is `x^8 + x^6 + x^5 + x^4 + x^3 + x + 1`, and its hex
//! form is the same bits read as a big-endian integer (`17b`).
//!
//! Random irreducible polynomials are produced by the minimal-polynomial
//! method: take a random element `g` of `GF(2)[x]/f` for a fixed irreducible
//! `f`, collect the constant terms of `g^0, g^1, …, g^(2n-1)` and run
//! Berlekamp-Massey. The connection polynomial it returns is the reciprocal
//! of the minimal polynomial of `g`, and is irreducible whenever that is.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bits::BitString;
use crate::error::{Error, Result};

/// Retries allowed when the minimal polynomial comes out short.
pub const GEN_RETRY_BUDGET: usize = 64;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Gf2Poly {
    // Little-endian coefficient words, no trailing zero words.
    words: Vec<u64>,
}

impl Gf2Poly {
    pub fn zero() -> Self {
        Gf2Poly { words: Vec::new() }
    }

    pub fn one() -> Self {
        Gf2Poly { words: vec![1] }
    }

    pub fn x() -> Self {
        Gf2Poly::monomial(1)
    }

    pub fn monomial(k: usize) -> Self {
        let mut p = Gf2Poly {
            words: vec![0; k / 64 + 1],
        };
        p.words[k / 64] = 1u64 << (k % 64);
        p
    }

    /// Sum of `x^e` over the given exponents (repeated exponents cancel).
    pub fn from_exponents(exps: &[usize]) -> Self {
        let mut p = Gf2Poly::zero();
        for &e in exps {
            p.flip_coeff(e);
        }
        p
    }

    /// Degree-descending bit string: bit `i` of a length `L` string is the
    /// coefficient of `x^(L-1-i)`. Leading zeros are allowed.
    pub fn from_desc_bits(bits: &BitString) -> Self {
        let l = bits.len();
        let mut p = Gf2Poly::zero();
        for i in bits.ones() {
            p.flip_coeff(l - 1 - i);
        }
        p
    }

    /// Degree-descending bits of length `degree + 1`; empty for the zero polynomial.
    pub fn to_desc_bits(&self) -> BitString {
        match self.degree() {
            None => BitString::default(),
            Some(d) => BitString::from_bools((0..=d).rev().map(|k| self.coeff(k))),
        }
    }

    pub fn parse_desc(s: &str) -> Result<Self> {
        Ok(Gf2Poly::from_desc_bits(&BitString::parse_binary(s)?))
    }

    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim();
        let digits = s
            .strip_prefix("0x")
            .or_else(|| s.strip_prefix("0X"))
            .unwrap_or(s);
        Ok(Gf2Poly::from_desc_bits(&BitString::from_hex(
            digits,
            digits.len() * 4,
        )?))
    }

    pub fn to_hex(&self) -> String {
        if self.is_zero() {
            return "0".into();
        }
        self.to_desc_bits().to_hex()
    }

    pub fn degree(&self) -> Option<usize> {
        let last = *self.words.last()?;
        Some((self.words.len() - 1) * 64 + 63 - last.leading_zeros() as usize)
    }

    pub fn is_zero(&self) -> bool {
        self.words.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.words == [1]
    }

    pub fn coeff(&self, k: usize) -> bool {
        self.words
            .get(k / 64)
            .is_some_and(|w| w >> (k % 64) & 1 == 1)
    }

    pub fn flip_coeff(&mut self, k: usize) {
        if self.words.len() <= k / 64 {
            self.words.resize(k / 64 + 1, 0);
        }
        self.words[k / 64] ^= 1u64 << (k % 64);
        self.normalize();
    }

    /// Exponents with nonzero coefficient, ascending.
    pub fn exponents(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (wi, &w) in self.words.iter().enumerate() {
            let mut w = w;
            while w != 0 {
                out.push(wi * 64 + w.trailing_zeros() as usize);
                w &= w - 1;
            }
        }
        out
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn normalize(&mut self) {
        while self.words.last() == Some(&0) {
            self.words.pop();
        }
    }

    pub fn add(&self, other: &Gf2Poly) -> Gf2Poly {
        let mut out = self.clone();
        out.add_assign(other);
        out
    }

    pub fn add_assign(&mut self, other: &Gf2Poly) {
        if self.words.len() < other.words.len() {
            self.words.resize(other.words.len(), 0);
        }
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
        self.normalize();
    }

    pub fn shl(&self, k: usize) -> Gf2Poly {
        if self.is_zero() {
            return Gf2Poly::zero();
        }
        let mut words = vec![0u64; self.words.len() + k / 64 + 1];
        xor_shifted(&mut words, &self.words, k);
        let mut p = Gf2Poly { words };
        p.normalize();
        p
    }

    fn shr(&self, k: usize) -> Gf2Poly {
        let ws = k / 64;
        let bs = k % 64;
        if ws >= self.words.len() {
            return Gf2Poly::zero();
        }
        let src = &self.words[ws..];
        let mut words = Vec::with_capacity(src.len());
        for i in 0..src.len() {
            let lo = src[i] >> bs;
            let hi = if bs > 0 && i + 1 < src.len() {
                src[i + 1] << (64 - bs)
            } else {
                0
            };
            words.push(lo | hi);
        }
        let mut p = Gf2Poly { words };
        p.normalize();
        p
    }

    /// Keeps the terms of degree below `k`.
    fn truncate(&self, k: usize) -> Gf2Poly {
        let mut words: Vec<u64> = self.words.iter().take(k.div_ceil(64)).copied().collect();
        if k % 64 != 0 {
            if let Some(last) = words.get_mut(k / 64) {
                *last &= (1u64 << (k % 64)) - 1;
            }
        }
        let mut p = Gf2Poly { words };
        p.normalize();
        p
    }

    pub fn mul(&self, other: &Gf2Poly) -> Gf2Poly {
        if self.is_zero() || other.is_zero() {
            return Gf2Poly::zero();
        }
        let (wide, narrow) = if self.weight() >= other.weight() {
            (self, other)
        } else {
            (other, self)
        };
        let mut words = vec![0u64; self.words.len() + other.words.len() + 1];
        for e in narrow.exponents() {
            xor_shifted(&mut words, &wide.words, e);
        }
        let mut p = Gf2Poly { words };
        p.normalize();
        p
    }

    pub fn square(&self) -> Gf2Poly {
        let mut words = Vec::with_capacity(self.words.len() * 2);
        for &w in &self.words {
            words.push(spread32(w as u32));
            words.push(spread32((w >> 32) as u32));
        }
        let mut p = Gf2Poly { words };
        p.normalize();
        p
    }

    /// Quotient and remainder of division by a nonzero divisor.
    pub fn div_rem(&self, divisor: &Gf2Poly) -> Result<(Gf2Poly, Gf2Poly)> {
        let d = divisor
            .degree()
            .ok_or_else(|| Error::invalid("division by the zero polynomial"))?;
        let mut rem = self.clone();
        let mut quot = Gf2Poly::zero();
        while let Some(r) = rem.degree() {
            if r < d {
                break;
            }
            let shift = r - d;
            quot.flip_coeff(shift);
            if rem.words.len() < divisor.words.len() + shift / 64 + 1 {
                rem.words.resize(divisor.words.len() + shift / 64 + 1, 0);
            }
            xor_shifted(&mut rem.words, &divisor.words, shift);
            rem.normalize();
        }
        Ok((quot, rem))
    }

    pub fn rem(&self, modulus: &Gf2Poly) -> Result<Gf2Poly> {
        Ok(self.div_rem(modulus)?.1)
    }

    pub fn gcd(a: &Gf2Poly, b: &Gf2Poly) -> Gf2Poly {
        let mut a = a.clone();
        let mut b = b.clone();
        while !b.is_zero() {
            let r = a.rem(&b).expect("divisor is nonzero");
            a = b;
            b = r;
        }
        a
    }

    /// `x^d p(1/x)` for `p` of degree `d`.
    pub fn reciprocal(&self) -> Gf2Poly {
        let Some(d) = self.degree() else {
            return Gf2Poly::zero();
        };
        Gf2Poly::from_exponents(&self.exponents().iter().map(|e| d - e).collect::<Vec<_>>())
    }

    /// Evaluates `self(g) mod m` by Horner's rule.
    pub fn compose_mod(&self, g: &Gf2Poly, m: &Modulus) -> Gf2Poly {
        let mut acc = Gf2Poly::zero();
        let Some(d) = self.degree() else {
            return acc;
        };
        for k in (0..=d).rev() {
            acc = m.mul(&acc, g);
            if self.coeff(k) {
                acc.add_assign(&Gf2Poly::one());
            }
        }
        m.reduce(&acc)
    }
}

impl fmt::Debug for Gf2Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf2Poly({self})")
    }
}

impl fmt::Display for Gf2Poly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let terms: Vec<String> = self
            .exponents()
            .into_iter()
            .rev()
            .map(|e| match e {
                0 => "1".to_string(),
                1 => "x".to_string(),
                _ => format!("x^{e}"),
            })
            .collect();
        f.write_str(&terms.join(" + "))
    }
}

impl Serialize for Gf2Poly {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Gf2Poly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Gf2Poly::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// `dst ^= src << shift`, with `dst` long enough to hold the result.
fn xor_shifted(dst: &mut [u64], src: &[u64], shift: usize) {
    let ws = shift / 64;
    let bs = shift % 64;
    if bs == 0 {
        for (i, &w) in src.iter().enumerate() {
            dst[i + ws] ^= w;
        }
    } else {
        for (i, &w) in src.iter().enumerate() {
            dst[i + ws] ^= w << bs;
            let hi = w >> (64 - bs);
            if hi != 0 {
                dst[i + ws + 1] ^= hi;
            }
        }
    }
}

/// Interleaves zeros between the bits of `v`.
fn spread32(v: u32) -> u64 {
    let mut x = v as u64;
    x = (x | x << 16) & 0x0000_FFFF_0000_FFFF;
    x = (x | x << 8) & 0x00FF_00FF_00FF_00FF;
    x = (x | x << 4) & 0x0F0F_0F0F_0F0F_0F0F;
    x = (x | x << 2) & 0x3333_3333_3333_3333;
    x = (x | x << 1) & 0x5555_5555_5555_5555;
    x
}

/// A reduction modulus. Moduli of the form `x^n + t(x)` with a short, low
/// degree tail are reduced by folding the high half onto the tail, which is
/// what keeps large-degree arithmetic cheap for trinomials and pentanomials.
#[derive(Clone, Debug)]
pub struct Modulus {
    poly: Gf2Poly,
    degree: usize,
    sparse_tail: Option<Vec<usize>>,
}

impl Modulus {
    pub fn new(poly: &Gf2Poly) -> Result<Self> {
        let degree = match poly.degree() {
            None => return Err(Error::invalid("zero modulus")),
            Some(0) => return Err(Error::invalid("modulus must have degree at least 1")),
            Some(d) => d,
        };
        let tail: Vec<usize> = poly
            .exponents()
            .into_iter()
            .filter(|&e| e < degree)
            .collect();
        let tail_deg = tail.last().copied().unwrap_or(0);
        let sparse_tail = (tail.len() <= 16 && tail_deg <= degree / 2).then_some(tail);
        Ok(Modulus {
            poly: poly.clone(),
            degree,
            sparse_tail,
        })
    }

    pub fn poly(&self) -> &Gf2Poly {
        &self.poly
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn reduce(&self, a: &Gf2Poly) -> Gf2Poly {
        match &self.sparse_tail {
            Some(tail) => {
                let mut r = a.clone();
                while r.degree().is_some_and(|d| d >= self.degree) {
                    let hi = r.shr(self.degree);
                    let mut next = r.truncate(self.degree);
                    let len = hi.words.len() + tail.last().copied().unwrap_or(0) / 64 + 2;
                    if next.words.len() < len {
                        next.words.resize(len, 0);
                    }
                    for &e in tail {
                        xor_shifted(&mut next.words, &hi.words, e);
                    }
                    next.normalize();
                    r = next;
                }
                r
            }
            None => a.rem(&self.poly).expect("modulus is nonzero"),
        }
    }

    pub fn mul(&self, a: &Gf2Poly, b: &Gf2Poly) -> Gf2Poly {
        self.reduce(&a.mul(b))
    }

    pub fn square(&self, a: &Gf2Poly) -> Gf2Poly {
        self.reduce(&a.square())
    }
}

/// `(a * b) mod m` over GF(2).
pub fn poly_mul_mod(a: &Gf2Poly, b: &Gf2Poly, m: &Gf2Poly) -> Result<Gf2Poly> {
    Ok(Modulus::new(m)?.mul(a, b))
}

fn prime_factors(mut n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n % d == 0 {
            out.push(d);
            while n % d == 0 {
                n /= d;
            }
        }
        d += 1;
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// Rabin's test: `p` of degree `n` is irreducible iff `x^(2^n) = x (mod p)`
/// and `gcd(x^(2^(n/d)) - x, p) = 1` for every prime `d | n`. The powers
/// `x^(2^k)` are taken by repeated squaring.
pub fn is_irreducible(p: &Gf2Poly) -> bool {
    let n = match p.degree() {
        None | Some(0) => return false,
        Some(n) => n,
    };
    let m = Modulus::new(p).expect("degree checked above");
    let x = m.reduce(&Gf2Poly::x());
    let primes = prime_factors(n);
    let mut wanted: Vec<usize> = primes.iter().map(|d| n / d).collect();
    wanted.sort_unstable();
    let mut powers: HashMap<usize, Gf2Poly> = HashMap::new();
    let mut r = x.clone();
    for k in 1..=n {
        r = m.square(&r);
        if wanted.binary_search(&k).is_ok() {
            powers.insert(k, r.clone());
        }
    }
    if r != x {
        return false;
    }
    wanted.iter().all(|k| {
        let diff = powers[k].add(&x);
        Gf2Poly::gcd(&diff, p).is_one()
    })
}

/// Connection polynomial `C(x) = 1 + c_1 x + … + c_L x^L` of the shortest
/// LFSR generating `seq`, i.e. `s_i = sum_(j=1..L) c_j s_(i-j)` for all
/// `i >= L`. For a power trace of `g` this is the reciprocal of the minimal
/// polynomial of `g` (equivalently, the minimal polynomial of `g^-1`). An
/// all-zero sequence gives the constant polynomial `1` (`L = 0`).
pub fn berlekamp_massey(seq: &BitString) -> Result<Gf2Poly> {
    Ok(berlekamp_massey_lfsr(seq)?.0)
}

/// As [`berlekamp_massey`], also returning the register length `L`, which
/// exceeds `deg C` when the sequence starts with a run of zeros.
pub fn berlekamp_massey_lfsr(seq: &BitString) -> Result<(Gf2Poly, usize)> {
    if seq.is_empty() || seq.len() % 2 != 0 {
        return Err(Error::invalid(format!(
            "sequence length must be a positive even number, got {}",
            seq.len()
        )));
    }
    let s: Vec<bool> = seq.iter().collect();
    let mut c = Gf2Poly::one();
    let mut b = Gf2Poly::one();
    let mut l = 0usize;
    let mut shift = 1usize;
    for i in 0..s.len() {
        let mut d = s[i];
        for j in c.exponents() {
            if j >= 1 && j <= l && s[i - j] {
                d = !d;
            }
        }
        if !d {
            shift += 1;
        } else if 2 * l <= i {
            let t = c.clone();
            c.add_assign(&b.shl(shift));
            l = i + 1 - l;
            b = t;
            shift = 1;
        } else {
            c.add_assign(&b.shl(shift));
            shift += 1;
        }
    }
    Ok((c, l))
}

/// Irreducible moduli shipped with the crate, as exponent lists.
const PRESET_BASES: &[(usize, &[usize])] = &[
    (2, &[2, 1, 0]),
    (4, &[4, 1, 0]),
    (8, &[8, 7, 6, 1, 0]),
    (16, &[16, 5, 3, 1, 0]),
    (32, &[32, 7, 3, 2, 0]),
    (64, &[64, 4, 3, 1, 0]),
    (128, &[128, 7, 2, 1, 0]),
    (256, &[256, 10, 5, 2, 0]),
    (512, &[512, 8, 5, 2, 0]),
    (1024, &[1024, 19, 6, 1, 0]),
];

fn base_cache() -> &'static Mutex<HashMap<usize, Gf2Poly>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Gf2Poly>>> = OnceLock::new();
    CACHE.get_or_init(|| {
        Mutex::new(
            PRESET_BASES
                .iter()
                .map(|(n, e)| (*n, Gf2Poly::from_exponents(e)))
                .collect(),
        )
    })
}

/// Lowest-weight irreducible of degree `n` in a fixed search order:
/// trinomials `x^n + x^k + 1` by increasing `k`, then pentanomials
/// `x^n + x^a + x^b + x^c + 1` by increasing `(a, b, c)`, middle exponents
/// capped at `n / 2`.
fn search_base(n: usize) -> Option<Gf2Poly> {
    let half = n / 2;
    for k in 1..=half.max(1) {
        let p = Gf2Poly::from_exponents(&[n, k, 0]);
        if is_irreducible(&p) {
            return Some(p);
        }
    }
    for a in 3..=half {
        for b in 2..a {
            for c in 1..b {
                let p = Gf2Poly::from_exponents(&[n, a, b, c, 0]);
                if is_irreducible(&p) {
                    return Some(p);
                }
            }
        }
    }
    None
}

/// The fixed irreducible `f(x)` of degree `n` defining `GF(2^n)`.
///
/// Preset degrees come from the shipped table (degree 8 is
/// `x^8 + x^7 + x^6 + x + 1`); any other degree is found once by
/// [`search_base`] and cached for the life of the process.
pub fn base_polynomial(n: usize) -> Result<Gf2Poly> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "unsupported degree {n}; need n >= 2"
        )));
    }
    if let Some(p) = base_cache().lock().expect("cache lock").get(&n) {
        return Ok(p.clone());
    }
    let p = search_base(n)
        .ok_or_else(|| Error::invalid(format!("no low-weight irreducible of degree {n}")))?;
    base_cache()
        .lock()
        .expect("cache lock")
        .insert(n, p.clone());
    Ok(p)
}

/// Degrees with a compiled-in base polynomial.
pub fn preset_degrees() -> Vec<usize> {
    PRESET_BASES.iter().map(|(n, _)| *n).collect()
}

/// Constant terms of `g^0, g^1, …, g^(2n-1) mod f`.
fn power_trace(g: &Gf2Poly, m: &Modulus) -> BitString {
    let n = m.degree();
    let mut seq = BitString::zeros(2 * n);
    let mut acc = Gf2Poly::one();
    for i in 0..2 * n {
        if acc.coeff(0) {
            seq.set(i, true);
        }
        acc = m.mul(&acc, g);
    }
    seq
}

/// Random irreducible polynomial of degree `n` from an `n`-bit seed.
///
/// The seed gives `g(x)` degree-descending (`0111 1100` is
/// `x^6 + x^5 + x^4 + x^3 + x^2`). When the minimal polynomial of `g` has
/// degree below `n`, `g` is replaced by `x*g + 1 mod f` and the computation
/// repeated, at most [`GEN_RETRY_BUDGET`] times.
pub fn gen_irreducible(n: usize, seed: &BitString) -> Result<Gf2Poly> {
    if seed.len() != n {
        return Err(Error::invalid(format!(
            "seed has {} bits, expected {n}",
            seed.len()
        )));
    }
    if seed.is_zero() {
        return Err(Error::invalid("seed must not be all zero"));
    }
    let f = base_polynomial(n)?;
    gen_irreducible_with_base(&f, seed)
}

/// As [`gen_irreducible`] but with an explicit base polynomial `f`.
pub fn gen_irreducible_with_base(f: &Gf2Poly, seed: &BitString) -> Result<Gf2Poly> {
    let m = Modulus::new(f)?;
    let n = m.degree();
    if seed.len() != n {
        return Err(Error::invalid(format!(
            "seed has {} bits, expected {n}",
            seed.len()
        )));
    }
    if seed.is_zero() {
        return Err(Error::invalid("seed must not be all zero"));
    }
    let mut g = Gf2Poly::from_desc_bits(seed);
    for _ in 0..=GEN_RETRY_BUDGET {
        let h = berlekamp_massey(&power_trace(&g, &m))?;
        if h.degree() == Some(n) {
            return Ok(h);
        }
        log::debug!(
            "minimal polynomial of degree {:?} < {n}; retrying",
            h.degree()
        );
        g = m.reduce(&g.shl(1).add(&Gf2Poly::one()));
    }
    Err(Error::GenerationFailure {
        attempts: GEN_RETRY_BUDGET + 1,
    })
}
