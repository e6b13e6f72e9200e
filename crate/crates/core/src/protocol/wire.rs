//! Binary message frames.
//!
//! ```text
//! frame  = version:u8  kind:u8  body_len:u32be  body
//! bits   = bit_len:u32be  ceil(bit_len/8) bytes, MSB first, zero padded
//! bytes  = len:u32be  raw bytes
//! keys   = n:u32be  x2:bits  x3:bits  x4:bits
//! ```
//!
//! Bodies by kind:
//!
//! | kind | message        | body                               |
//! |------|----------------|------------------------------------|
//! | 1    | signed contract| contract:bytes  tag:bits           |
//! | 2    | forward        | contract:bytes  tag:bits  keys     |
//! | 3    | key reveal     | keys                               |
//! | 4    | verdict        | accept:u8 (0 or 1)                 |
//! | 5    | abort          | reason:bytes (UTF-8)               |
//!
//! `contract` is the canonical contract encoding.

use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::otuh::{SignatureKeys, SignatureTag};

use super::Contract;

pub const WIRE_VERSION: u8 = 1;
const HEADER_LEN: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    SignedContract = 1,
    Forward = 2,
    KeyReveal = 3,
    Verdict = 4,
    Abort = 5,
}

impl MessageKind {
    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            1 => MessageKind::SignedContract,
            2 => MessageKind::Forward,
            3 => MessageKind::KeyReveal,
            4 => MessageKind::Verdict,
            5 => MessageKind::Abort,
            _ => return Err(Error::format(format!("unknown message kind {b}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    SignedContract {
        contract: Contract,
        tag: SignatureTag,
    },
    Forward {
        contract: Contract,
        tag: SignatureTag,
        keys: SignatureKeys,
    },
    KeyReveal {
        keys: SignatureKeys,
    },
    Verdict {
        accept: bool,
    },
    Abort {
        reason: String,
    },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::SignedContract { .. } => MessageKind::SignedContract,
            Message::Forward { .. } => MessageKind::Forward,
            Message::KeyReveal { .. } => MessageKind::KeyReveal,
            Message::Verdict { .. } => MessageKind::Verdict,
            Message::Abort { .. } => MessageKind::Abort,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        match self {
            Message::SignedContract { contract, tag } => {
                put_bytes(&mut body, &contract.to_bytes());
                put_bits(&mut body, &tag.bits);
            }
            Message::Forward {
                contract,
                tag,
                keys,
            } => {
                put_bytes(&mut body, &contract.to_bytes());
                put_bits(&mut body, &tag.bits);
                put_keys(&mut body, keys);
            }
            Message::KeyReveal { keys } => put_keys(&mut body, keys),
            Message::Verdict { accept } => body.push(u8::from(*accept)),
            Message::Abort { reason } => put_bytes(&mut body, reason.as_bytes()),
        }
        let mut out = Vec::with_capacity(HEADER_LEN + body.len());
        out.push(WIRE_VERSION);
        out.push(self.kind() as u8);
        out.extend_from_slice(&(body.len() as u32).to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Message> {
        if frame.len() < HEADER_LEN {
            return Err(Error::format(format!(
                "frame of {} bytes is shorter than its header",
                frame.len()
            )));
        }
        if frame[0] != WIRE_VERSION {
            return Err(Error::format(format!(
                "unsupported wire version {}",
                frame[0]
            )));
        }
        let kind = MessageKind::from_u8(frame[1])?;
        let len = u32::from_be_bytes(frame[2..6].try_into().expect("4 bytes")) as usize;
        if frame.len() - HEADER_LEN != len {
            return Err(Error::format(format!(
                "frame body is {} bytes, header says {len}",
                frame.len() - HEADER_LEN
            )));
        }
        let mut r = Reader {
            buf: &frame[HEADER_LEN..],
        };
        let msg = match kind {
            MessageKind::SignedContract => Message::SignedContract {
                contract: Contract::from_bytes(r.bytes()?)?,
                tag: SignatureTag { bits: r.bits()? },
            },
            MessageKind::Forward => Message::Forward {
                contract: Contract::from_bytes(r.bytes()?)?,
                tag: SignatureTag { bits: r.bits()? },
                keys: r.keys()?,
            },
            MessageKind::KeyReveal => Message::KeyReveal { keys: r.keys()? },
            MessageKind::Verdict => match r.take(1)?[0] {
                0 => Message::Verdict { accept: false },
                1 => Message::Verdict { accept: true },
                b => return Err(Error::format(format!("verdict byte {b}"))),
            },
            MessageKind::Abort => Message::Abort {
                reason: String::from_utf8(r.bytes()?.to_vec())
                    .map_err(|e| Error::format(format!("abort reason is not UTF-8: {e}")))?,
            },
        };
        if !r.buf.is_empty() {
            return Err(Error::format(format!(
                "{} trailing bytes in frame",
                r.buf.len()
            )));
        }
        Ok(msg)
    }
}

pub(crate) fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(b);
}

fn put_bits(out: &mut Vec<u8>, b: &BitString) {
    out.extend_from_slice(&(b.len() as u32).to_be_bytes());
    out.extend_from_slice(&b.to_bytes_msb());
}

fn put_keys(out: &mut Vec<u8>, k: &SignatureKeys) {
    out.extend_from_slice(&(k.n() as u32).to_be_bytes());
    put_bits(out, &k.x2);
    put_bits(out, &k.x3);
    put_bits(out, &k.x4);
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::format(format!(
                "truncated: need {n} bytes, have {}",
                self.buf.len()
            )));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    fn bits(&mut self) -> Result<BitString> {
        let n = self.u32()? as usize;
        let raw = self.take(n.div_ceil(8))?;
        let full = BitString::from_bytes_msb(raw);
        if full.iter().skip(n).any(|b| b) {
            return Err(Error::format("nonzero padding bits"));
        }
        Ok(full.slice(0, n))
    }

    fn keys(&mut self) -> Result<SignatureKeys> {
        let n = self.u32()? as usize;
        let (x2, x3, x4) = (self.bits()?, self.bits()?, self.bits()?);
        if x2.len() != n {
            return Err(Error::format(format!(
                "key share declares n = {n} but carries {} bits",
                x2.len()
            )));
        }
        SignatureKeys::new(x2, x3, x4).map_err(|e| Error::format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn contract() -> Contract {
        Contract {
            merchant_id: "shop".into(),
            client_id: "alice".into(),
            timestamp: 1_700_000_000,
            price: 4200,
            payload: "one widget".into(),
        }
    }

    fn keys() -> SignatureKeys {
        let b = |s: &str| BitString::parse_binary(s).unwrap();
        SignatureKeys::new(b("0111 1100"), b("1000 0001"), b("1010 0110")).unwrap()
    }

    #[test]
    fn verdict_frame_is_bit_exact() {
        assert_eq!(
            Message::Verdict { accept: true }.encode(),
            vec![1, 4, 0, 0, 0, 1, 1]
        );
    }

    #[test]
    fn key_reveal_frame_layout() {
        let f = Message::KeyReveal { keys: keys() }.encode();
        let want = [
            1,
            3,
            0,
            0,
            0,
            19, // header
            0,
            0,
            0,
            8, // n
            0,
            0,
            0,
            8,
            0b0111_1100, //
            0,
            0,
            0,
            8,
            0b1000_0001, //
            0,
            0,
            0,
            8,
            0b1010_0110,
        ];
        assert_eq!(f, want);
    }

    #[test]
    fn malformed_frames_are_rejected() {
        let good = Message::SignedContract {
            contract: contract(),
            tag: SignatureTag {
                bits: BitString::parse_binary("1011").unwrap(),
            },
        }
        .encode();
        assert!(Message::decode(&good).is_ok());
        assert!(Message::decode(&good[..good.len() - 1]).is_err());
        assert!(Message::decode(&good[..3]).is_err());
        let mut v = good.clone();
        v[0] = 2;
        assert!(Message::decode(&v).is_err());
        let mut k = good.clone();
        k[1] = 9;
        assert!(Message::decode(&k).is_err());
        let mut pad = good.clone();
        *pad.last_mut().unwrap() |= 1; // padding bit of the 4-bit tag
        assert!(Message::decode(&pad).is_err());
        assert!(Message::decode(&[1, 4, 0, 0, 0, 1, 7]).is_err());
    }

    proptest! {
        #[test]
        fn frames_round_trip(
            payload in ".{0,40}",
            price in any::<u64>(),
            ts in any::<u64>(),
            tag in prop::collection::vec(any::<bool>(), 1..70),
            accept in any::<bool>(),
            reason in ".{0,20}",
        ) {
            let c = Contract { payload, price, timestamp: ts, ..contract() };
            let tag = SignatureTag { bits: BitString::from_bools(tag) };
            for m in [
                Message::SignedContract { contract: c.clone(), tag: tag.clone() },
                Message::Forward { contract: c.clone(), tag: tag.clone(), keys: keys() },
                Message::KeyReveal { keys: keys() },
                Message::Verdict { accept },
                Message::Abort { reason: reason.clone() },
            ] {
                prop_assert_eq!(Message::decode(&m.encode()).unwrap(), m);
            }
        }
    }
}
