//! Monte-Carlo estimates of forgery and repudiation success.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::otuh::{lfsr_hash, SignatureKeys};
use crate::rng;

use super::{run_e2e, Adversary, Contract, Decision, Scenario};

const CHUNK: u64 = 4096;

/// How the forger alters a signed message.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tamper {
    /// Flip one uniformly chosen bit.
    BitFlip,
    /// XOR a uniformly chosen nonzero pattern.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgeryStats {
    pub n: usize,
    pub message_bits: usize,
    pub tamper: Tamper,
    pub trials: u64,
    pub accepted: u64,
    pub rate: f64,
    /// `m · 2^(1−n)`.
    pub bound: f64,
    /// Upper edge of the 3σ binomial band around `bound`.
    pub band: f64,
}

impl ForgeryStats {
    pub fn within_bound(&self) -> bool {
        self.rate <= self.band
    }
}

/// `m · 2^(1−n)` and its 3σ upper band over `trials` draws.
pub fn bound_with_band(m: usize, n: usize, trials: u64) -> (f64, f64) {
    let p = (m as f64 * 2f64.powi(1 - n as i32)).min(1.0);
    let t = trials as f64;
    (p, p + 3.0 * (p * (1.0 - p) / t).sqrt())
}

fn uniform_keys<R: Rng>(r: &mut R, n: usize) -> SignatureKeys {
    // Keys with an all-zero polynomial seed or LFSR state cannot sign; redraw.
    loop {
        let mut draw = || BitString::from_bools((0..n).map(|_| r.gen::<bool>()));
        let (x2, x3, x4) = (draw(), draw(), draw());
        if !x2.is_zero() && !x3.is_zero() {
            return SignatureKeys::new(x2, x3, x4).expect("n >= 2");
        }
    }
}

fn forgery_trial<R: Rng>(r: &mut R, n: usize, m: usize, tamper: Tamper) -> Result<bool> {
    let keys = uniform_keys(r, n);
    let msg = BitString::from_bools((0..m).map(|_| r.gen::<bool>()));
    let mut forged = msg.clone();
    match tamper {
        Tamper::BitFlip => forged.flip(r.gen_range(0..m)),
        Tamper::Random => loop {
            let d = BitString::from_bools((0..m).map(|_| r.gen::<bool>()));
            if !d.is_zero() {
                forged.xor_assign(&d);
                break;
            }
        },
    }
    // Signer and verifier derive the same polynomial from the same key, so
    // it is generated once; the tags are compared as `verify` would.
    let poly = keys.polynomial()?;
    let tag = |x: &BitString| -> Result<BitString> {
        let mut t = lfsr_hash(x, &poly, &keys.x3)?;
        t.xor_assign(&keys.x4);
        Ok(t)
    };
    Ok(tag(&msg)? == tag(&forged)?)
}

/// Signs a random `m`-bit message with fresh uniform keys, alters it and
/// counts how often the altered message verifies.
pub fn forgery_monte_carlo(
    n: usize,
    m: usize,
    trials: u64,
    tamper: Tamper,
    seed: u64,
) -> Result<ForgeryStats> {
    if n < 2 || m == 0 || trials == 0 {
        return Err(Error::invalid(format!(
            "need n >= 2, m >= 1, trials >= 1 (got {n}, {m}, {trials})"
        )));
    }
    let chunks = trials.div_ceil(CHUNK);
    let accepted = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(seed, &format!("forgery/chunk{c}"));
            let len = CHUNK.min(trials - c * CHUNK);
            let mut hits = 0u64;
            for _ in 0..len {
                hits += u64::from(forgery_trial(&mut r, n, m, tamper)?);
            }
            Ok(hits)
        })
        .sum::<Result<u64>>()?;
    let (bound, band) = bound_with_band(m, n, trials);
    Ok(ForgeryStats {
        n,
        message_bits: m,
        tamper,
        trials,
        accepted,
        rate: accepted as f64 / trials as f64,
        bound,
        band,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackStats {
    pub adversary: Adversary,
    pub n: usize,
    pub message_bits: usize,
    pub trials: u64,
    /// Runs where the adversary got its way: a forged contract accepted, or a
    /// denied contract left unbound.
    pub successes: u64,
    pub rate: f64,
    pub bound: f64,
    pub band: f64,
    /// Runs where the client and the TP reached the same verdict.
    pub verdict_agreement: u64,
    pub completed: u64,
}

/// Full protocol runs with uniformly random identical keys on both channels.
pub fn attack_trials(
    contract: &Contract,
    adversary: Adversary,
    n: usize,
    trials: u64,
    seed: u64,
) -> Result<AttackStats> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let per = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut s = Scenario::with_random_keys(
                contract.clone(),
                n,
                1,
                rng::child_seed(seed, &format!("attack/{i}")),
            );
            s.adversary = adversary;
            let t = run_e2e(&s)?;
            let success = match adversary {
                Adversary::None => false,
                Adversary::ForgeClient => t.tp_verdict == Decision::Accept,
                Adversary::ForgeTp => t.client_verdict == Decision::Accept,
                Adversary::RepudiateMerchant => t.merchant_bound == Some(false),
            };
            let agree = t.client_verdict == t.tp_verdict;
            Ok((
                u64::from(success),
                u64::from(agree),
                u64::from(t.outcome == super::Outcome::Completed),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (successes, verdict_agreement, completed) = per
        .iter()
        .fold((0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let m = contract.bit_len();
    let (bound, band) = bound_with_band(m, n, trials);
    Ok(AttackStats {
        adversary,
        n,
        message_bits: m,
        trials,
        successes,
        rate: successes as f64 / trials as f64,
        bound,
        band,
        verdict_agreement,
        completed,
    })
}
