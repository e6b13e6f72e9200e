//! Packed bit strings.
//!
//! Bit `i` of a [`BitString`] is the `i`-th symbol when the string is read
//! left to right. Hex text encodes the string as a big-endian integer whose
//! most significant bit is bit 0, left-padded with zeros to whole nibbles, so
//! `0111 1100` is `7c`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    words: Vec<u64>,
    len: usize,
}

#[inline]
fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitString {
    pub fn zeros(len: usize) -> Self {
        BitString {
            words: vec![0; words_for(len)],
            len,
        }
    }

    pub fn from_bools<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let mut out = BitString::default();
        for b in bits {
            out.push(b);
        }
        out
    }

    /// Parses `0`/`1` characters; spaces and underscores are ignored.
    pub fn parse_binary(s: &str) -> Result<Self> {
        let mut out = BitString::default();
        for c in s.chars() {
            match c {
                '0' => out.push(false),
                '1' => out.push(true),
                ' ' | '_' => {}
                other => return Err(Error::format(format!("invalid binary digit {other:?}"))),
            }
        }
        Ok(out)
    }

    /// Bytes read most-significant bit first.
    pub fn from_bytes_msb(bytes: &[u8]) -> Self {
        let mut out = BitString::zeros(bytes.len() * 8);
        for (i, byte) in bytes.iter().enumerate() {
            for j in 0..8 {
                if byte & (0x80 >> j) != 0 {
                    out.set(i * 8 + j, true);
                }
            }
        }
        out
    }

    /// Inverse of [`BitString::from_bytes_msb`]; a trailing partial byte is zero padded.
    pub fn to_bytes_msb(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.ones() {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    pub fn from_hex(hex: &str, len: usize) -> Result<Self> {
        let hex = hex.trim();
        let hex = hex
            .strip_prefix("0x")
            .or_else(|| hex.strip_prefix("0X"))
            .unwrap_or(hex);
        let mut digits = BitString::default();
        for c in hex.chars() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| Error::format(format!("invalid hex digit {c:?}")))?;
            for j in (0..4).rev() {
                digits.push(v >> j & 1 == 1);
            }
        }
        if digits.len() < len {
            let pad = len - digits.len();
            let mut out = BitString::zeros(pad);
            out.extend(&digits);
            return Ok(out);
        }
        let excess = digits.len() - len;
        if (0..excess).any(|i| digits.get(i)) {
            return Err(Error::format(format!(
                "hex value does not fit in {len} bits"
            )));
        }
        Ok(digits.slice(excess, len))
    }

    pub fn to_hex(&self) -> String {
        const DIGITS: &[u8; 16] = b"0123456789abcdef";
        let pad = (4 - self.len % 4) % 4;
        let total = self.len + pad;
        let mut s = String::with_capacity(total / 4);
        for chunk in 0..total / 4 {
            let mut v = 0usize;
            for j in 0..4 {
                let pos = chunk * 4 + j;
                let bit = pos >= pad && self.get(pos - pad);
                v = v << 1 | bit as usize;
            }
            s.push(DIGITS[v] as char);
        }
        s
    }

    pub fn to_binary_string(&self) -> String {
        (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i >> 6] >> (i & 63) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        let mask = 1u64 << (i & 63);
        if value {
            self.words[i >> 6] |= mask;
        } else {
            self.words[i >> 6] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range for length {}",
            self.len
        );
        self.words[i >> 6] ^= 1u64 << (i & 63);
    }

    pub fn push(&mut self, value: bool) {
        if self.len % 64 == 0 {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, value);
    }

    pub fn extend(&mut self, other: &BitString) {
        self.words.reserve(words_for(other.len));
        for b in other.iter() {
            self.push(b);
        }
    }

    pub fn concat(parts: &[&BitString]) -> BitString {
        let mut out = BitString::default();
        for p in parts {
            out.extend(p);
        }
        out
    }

    pub fn slice(&self, start: usize, len: usize) -> BitString {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = BitString::zeros(len);
        for i in 0..len {
            if self.get(start + i) {
                out.set(i, true);
            }
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    /// Indices of set bits in increasing order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + tz)
                }
            })
        })
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn xor_assign(&mut self, other: &BitString) {
        assert_eq!(
            self.len, other.len,
            "xor of bit strings with different lengths"
        );
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitString) -> BitString {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Number of positions where the two strings differ.
    pub fn hamming_distance(&self, other: &BitString) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Parity of the bitwise AND with `other`.
    #[inline]
    pub(crate) fn and_parity(&self, other: &BitString) -> bool {
        debug_assert_eq!(self.len, other.len);
        let mut acc = 0u64;
        for (a, b) in self.words.iter().zip(&other.words) {
            acc ^= a & b;
        }
        acc.count_ones() & 1 == 1
    }

    /// Moves every bit one position to the right, drops the last bit and
    /// writes `first` into position 0.
    #[inline]
    pub(crate) fn shift_in_front(&mut self, first: bool) {
        if self.len == 0 {
            return;
        }
        let mut carry = first as u64;
        for w in self.words.iter_mut() {
            let out = *w >> 63;
            *w = *w << 1 | carry;
            carry = out;
        }
        let tail = self.len & 63;
        if tail != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << tail) - 1;
        }
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.len <= 128 {
            write!(f, "BitString({})", self.to_binary_string())
        } else {
            write!(
                f,
                "BitString(len={}, hex={}…)",
                self.len,
                &self.to_hex()[..16]
            )
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_binary_string())
    }
}

#[derive(Serialize, Deserialize)]
struct HexForm {
    bits: usize,
    hex: String,
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        HexForm {
            bits: self.len,
            hex: self.to_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let form = HexForm::deserialize(deserializer)?;
        BitString::from_hex(&form.hex, form.bits).map_err(serde::de::Error::custom)
    }
}
