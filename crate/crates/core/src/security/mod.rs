//! Finite-key security calculus.
//!
//! From detection counts and a phase-error source, [`min_entropy`] bounds the
//! unknown information `H_n` of an `l`-bit key substring, and
//! [`optimize_n`] picks the smallest `n = l` whose forgery probability
//! `m · 2^(1 − H_n)` meets the target. Natural logarithms appear inside the
//! sampling and concentration bounds, base-2 logarithms in entropies.

mod coin;

pub use coin::{coin_imbalance, coin_imbalance_with, fidelity_imperfect, CoinOptions, SourceFlaws};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgp::DetectionSummary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityBudget {
    pub eps_ec: f64,
    pub eps_bar: f64,
    pub eps_f: f64,
    pub eps_prime: f64,
    pub eps_tot_target: f64,
}

impl Default for SecurityBudget {
    fn default() -> Self {
        SecurityBudget {
            eps_ec: 1e-10,
            eps_bar: 1e-10,
            eps_f: 1e-10,
            eps_prime: 1e-10,
            eps_tot_target: 5e-10,
        }
    }
}

impl SecurityBudget {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.eps_ec,
            self.eps_bar,
            self.eps_f,
            self.eps_prime,
            self.eps_tot_target,
        ];
        if all.iter().all(|e| *e > 0.0 && *e < 1.0) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "failure probabilities must lie in (0,1): {self:?}"
            )))
        }
    }

    /// `2 ε_EC + 2 ε′`.
    pub fn eps_rob(&self) -> f64 {
        2.0 * self.eps_ec + 2.0 * self.eps_prime
    }

    /// `2 ε′`.
    pub fn eps_rep(&self) -> f64 {
        2.0 * self.eps_prime
    }
}

/// Binary Shannon entropy in bits.
pub fn binary_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::invalid(format!(
            "entropy argument {x} outside [0,1]"
        )));
    }
    Ok(binary_entropy_unchecked(x))
}

pub(crate) fn binary_entropy_unchecked(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Upper fluctuation `γ^U(l, k, λ, ε)` for sampling without replacement.
pub fn gamma_u(l: f64, k: f64, lambda: f64, eps: f64) -> Result<f64> {
    if !(l >= 1.0 && k >= 1.0) {
        return Err(Error::invalid(format!(
            "gamma_u needs l, k >= 1 (got {l}, {k})"
        )));
    }
    if !(lambda > 0.0 && lambda < 1.0) || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid(format!(
            "gamma_u needs lambda, eps in (0,1) (got {lambda}, {eps})"
        )));
    }
    let a = l.max(k);
    let s = l + k;
    let g = s / (l * k)
        * (s / (2.0 * std::f64::consts::PI * l * k * lambda * (1.0 - lambda) * eps * eps)).ln();
    let num = (1.0 - 2.0 * lambda) * a * g / s
        + (a * a * g * g / (s * s) + 4.0 * lambda * (1.0 - lambda) * g).sqrt();
    let den = 2.0 + 2.0 * a * a * g / (s * s);
    Ok((num / den).max(0.0))
}

/// `Δ_n = sqrt(n/2 · ln(1/ε_F))`.
pub fn kato_delta(n: f64, eps_f: f64) -> f64 {
    (0.5 * n * (1.0 / eps_f).ln()).sqrt()
}

/// Largest `E_p` with `1 − 2Δ ≤ sqrt(E_b^y E_p) + sqrt((1 − E_b^y)(1 − E_p))`.
///
/// Writing `E_b^y = sin²β`, `E_p = sin²φ` and `1 − 2Δ = cos γ`, the right
/// side is `cos(φ − β)`, so the bound is `sin²(β + γ)` unless `β + γ` passes
/// `π/2`, in which case every `E_p` is allowed and the answer is 1.
pub fn phase_error_from_coin(e_b_y: f64, delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&e_b_y) || !(0.0..=0.5).contains(&delta) {
        return Err(Error::invalid(format!(
            "need E_b^y in [0,1] and Delta in [0,0.5] (got {e_b_y}, {delta})"
        )));
    }
    let c = 1.0 - 2.0 * delta;
    let s = (1.0 - c * c).max(0.0).sqrt();
    let (se, ce) = (e_b_y.sqrt(), (1.0 - e_b_y).sqrt());
    if ce * c - se * s < 0.0 {
        return Ok(1.0);
    }
    let e = (se * c + ce * s).powi(2).min(1.0);
    if satisfies_coin(e_b_y, e, c) {
        Ok(e)
    } else {
        Ok(bisect_coin(e_b_y, c))
    }
}

fn coin_rhs(e_b_y: f64, e_p: f64) -> f64 {
    (e_b_y * e_p).sqrt() + ((1.0 - e_b_y) * (1.0 - e_p)).sqrt()
}

fn satisfies_coin(e_b_y: f64, e_p: f64, c: f64) -> bool {
    coin_rhs(e_b_y, e_p) >= c - 1e-12
}

/// The right side peaks at `E_p = E_b^y` and falls monotonically above it.
fn bisect_coin(e_b_y: f64, c: f64) -> f64 {
    let (mut lo, mut hi) = (e_b_y, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if coin_rhs(e_b_y, mid) >= c {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// `2^(−H_n)`.
pub fn guess_probability(h_n: f64) -> f64 {
    2f64.powf(-h_n)
}

/// `m · 2^(1 − H_n)`.
pub fn forgery_probability(m: u64, h_n: f64) -> f64 {
    m as f64 * 2f64.powf(1.0 - h_n)
}

/// Where the phase-error rate comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PhaseErrorSource {
    /// Full chain from a coin imbalance.
    Coin { delta: f64 },
    /// A phase-error rate taken as `E_p*`; the concentration step still applies.
    Rate { e_p: f64 },
    /// A phase-error rate taken as the bound `Ē_p` directly.
    Bound { e_p_bar: f64 },
}

/// Counts and leakage entering the entropy bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyInputs {
    pub n_x: u64,
    pub n_y: u64,
    pub m_y: u64,
    pub leak_ec: f64,
}

impl EntropyInputs {
    pub fn from_summary(summary: &DetectionSummary, leak_ec: f64) -> Self {
        EntropyInputs {
            n_x: summary.n_x,
            n_y: summary.n_y,
            m_y: summary.m_y,
            leak_ec,
        }
    }
}

/// Every intermediate of the bound for one `l`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyTrace {
    pub l: u64,
    pub e_b_y_star: Option<f64>,
    pub e_p_star: Option<f64>,
    pub e_p_bar: f64,
    pub e_p_bar_l: f64,
    pub h_n: f64,
}

/// Largest double strictly below `x`.
fn down(x: f64) -> f64 {
    if x == 0.0 {
        -f64::from_bits(1)
    } else if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        f64::from_bits(x.to_bits() + 1)
    }
}

/// `Ē_p` for the given source (independent of `l`).
pub fn phase_error_bound(
    inputs: &EntropyInputs,
    source: PhaseErrorSource,
    budget: &SecurityBudget,
) -> Result<(Option<f64>, Option<f64>, f64)> {
    let n_x = inputs.n_x as f64;
    let lift = |e_p_star: f64| ((n_x * e_p_star + kato_delta(n_x, budget.eps_f)) / n_x).min(1.0);
    match source {
        PhaseErrorSource::Coin { delta } => {
            if inputs.n_y == 0 {
                return Err(Error::InsufficientData("no Y-basis events".into()));
            }
            let n_y = inputs.n_y as f64;
            let e_b_y_star = ((inputs.m_y as f64 + kato_delta(n_y, budget.eps_f)) / n_y).min(1.0);
            let e_p_star = phase_error_from_coin(e_b_y_star, delta.clamp(0.0, 0.5))?;
            Ok((Some(e_b_y_star), Some(e_p_star), lift(e_p_star)))
        }
        PhaseErrorSource::Rate { e_p } => {
            if !(0.0..=1.0).contains(&e_p) {
                return Err(Error::invalid(format!("E_p {e_p} outside [0,1]")));
            }
            Ok((None, Some(e_p), lift(e_p)))
        }
        PhaseErrorSource::Bound { e_p_bar } => {
            if !(0.0..=1.0).contains(&e_p_bar) {
                return Err(Error::invalid(format!("bound {e_p_bar} outside [0,1]")));
            }
            Ok((None, None, e_p_bar))
        }
    }
}

/// Unknown information `H_n` of an `l`-bit substring.
///
/// `H_n = l · [1 − H(Ē_p^l) − leak_EC/n_x − log2(2/ε_EC)/n_x]` with
/// `Ē_p^l = Ē_p + γ^U(l, n_x − l, Ē_p, ε̄)`, clamped at 0 and zero whenever
/// `Ē_p^l ≥ 1/2`. Each subtraction is rounded down by one ulp so the result
/// never exceeds the exact value.
pub fn min_entropy(
    l: u64,
    inputs: &EntropyInputs,
    source: PhaseErrorSource,
    budget: &SecurityBudget,
) -> Result<EntropyTrace> {
    budget.validate()?;
    if l == 0 || l >= inputs.n_x {
        return Err(Error::invalid(format!(
            "substring length {l} must lie in [1, n_x) with n_x = {}",
            inputs.n_x
        )));
    }
    let (e_b_y_star, e_p_star, e_p_bar) = phase_error_bound(inputs, source, budget)?;
    min_entropy_from_bound(l, inputs, e_b_y_star, e_p_star, e_p_bar, budget)
}

fn min_entropy_from_bound(
    l: u64,
    inputs: &EntropyInputs,
    e_b_y_star: Option<f64>,
    e_p_star: Option<f64>,
    e_p_bar: f64,
    budget: &SecurityBudget,
) -> Result<EntropyTrace> {
    let n_x = inputs.n_x as f64;
    let lf = l as f64;
    let e_p_bar_l = if e_p_bar <= 0.0 {
        0.0
    } else if e_p_bar >= 0.5 {
        e_p_bar
    } else {
        e_p_bar + gamma_u(lf, n_x - lf, e_p_bar, budget.eps_bar)?
    };
    let h_n = if e_p_bar_l >= 0.5 {
        0.0
    } else {
        let mut inner = down(1.0 - binary_entropy_unchecked(e_p_bar_l));
        inner = down(inner - inputs.leak_ec / n_x);
        inner = down(inner - (2.0 / budget.eps_ec).log2() / n_x);
        (lf * inner).max(0.0)
    };
    Ok(EntropyTrace {
        l,
        e_b_y_star,
        e_p_star,
        e_p_bar,
        e_p_bar_l,
        h_n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecurityResult {
    pub n_x: u64,
    pub n_star: u64,
    pub h_n: f64,
    pub trace: EntropyTrace,
    pub sr_per_run: f64,
    pub sr_per_second: f64,
    pub eps_rob: f64,
    pub eps_rep: f64,
    pub eps_for: f64,
    pub eps_tot: f64,
    /// True when the bracketed search had to fall back to a linear scan.
    pub linear_scan: bool,
}

/// Smallest `n` with `ε_tot ≤ target`, and the resulting signature rate.
///
/// Feasibility is found by exponential bracketing and bisection; the
/// boundary is then re-checked and, if the predicate turned out not to be
/// monotone there, the search restarts as a linear scan.
pub fn optimize_n(
    inputs: &EntropyInputs,
    source: PhaseErrorSource,
    budget: &SecurityBudget,
    m: u64,
    duration_s: f64,
) -> Result<SecurityResult> {
    budget.validate()?;
    if m == 0 {
        return Err(Error::invalid("message length must be positive"));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let eps_rob = budget.eps_rob();
    let eps_rep = budget.eps_rep();
    if eps_rob.max(eps_rep) > budget.eps_tot_target {
        return Err(Error::Infeasible(format!(
            "robustness/repudiation bounds {eps_rob:e}/{eps_rep:e} exceed the target {:e}",
            budget.eps_tot_target
        )));
    }
    let max_n = inputs.n_x / 3;
    if max_n < 1 {
        return Err(Error::Infeasible(format!(
            "n_x = {} leaves no room for a key block",
            inputs.n_x
        )));
    }
    let (e_b_y_star, e_p_star, e_p_bar) = phase_error_bound(inputs, source, budget)?;
    let eval = |l: u64| min_entropy_from_bound(l, inputs, e_b_y_star, e_p_star, e_p_bar, budget);
    let feasible = |l: u64| -> Result<bool> {
        Ok(forgery_probability(m, eval(l)?.h_n) <= budget.eps_tot_target)
    };

    let infeasible = || {
        Error::Infeasible(format!(
            "no n <= n_x/3 = {max_n} reaches eps_tot <= {:e}",
            budget.eps_tot_target
        ))
    };
    let mut hi = 1u64;
    while !feasible(hi)? {
        if hi == max_n {
            return Err(infeasible());
        }
        hi = (hi * 2).min(max_n);
    }
    let mut lo = hi / 2; // infeasible or zero
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut n_star = hi;
    let mut linear_scan = false;
    let boundary_ok = (n_star == 1 || !feasible(n_star - 1)?) && feasible((n_star + 1).min(max_n))?;
    if !boundary_ok {
        log::warn!("forgery bound not monotone near n = {n_star}; scanning linearly");
        linear_scan = true;
        n_star = (1..=max_n)
            .find(|&l| feasible(l).unwrap_or(false))
            .ok_or_else(infeasible)?;
    }
    let trace = eval(n_star)?;
    let eps_for = forgery_probability(m, trace.h_n);
    let sr_per_run = inputs.n_x as f64 / (3.0 * n_star as f64);
    Ok(SecurityResult {
        n_x: inputs.n_x,
        n_star,
        h_n: trace.h_n,
        trace,
        sr_per_run,
        sr_per_second: sr_per_run / duration_s,
        eps_rob,
        eps_rep,
        eps_for,
        eps_tot: eps_rob.max(eps_rep).max(eps_for),
        linear_scan,
    })
}

/// Rate of a three-party system: all parties must use one `n`, the largest
/// required by any channel, and the slowest channel sets the pace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemRate {
    pub n: u64,
    pub sr_per_second: f64,
    pub limiting_channel: usize,
}

pub fn system_rate(channels: &[(SecurityResult, f64)]) -> Result<SystemRate> {
    let n = channels
        .iter()
        .map(|(r, _)| r.n_star)
        .max()
        .ok_or_else(|| Error::invalid("no channels"))?;
    let (limiting_channel, sr_per_second) = channels
        .iter()
        .enumerate()
        .map(|(i, (r, duration))| (i, r.n_x as f64 / (3.0 * n as f64) / duration))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty");
    Ok(SystemRate {
        n,
        sr_per_second,
        limiting_channel,
    })
}
