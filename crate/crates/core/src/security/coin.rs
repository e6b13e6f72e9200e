//! Quantum-coin imbalance of a flawed source.
//!
//! The X- and Y-basis states are coherent states `α′`, `−e^{iδ}α′` (X) and
//! `−ie^{iδ}α′`, `ie^{iδ}α′` (Y). The basis-dependent flaws enter as a
//! prefactor `¼(1−ε)e^{−μ}cos²θ` on the summed overlaps.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

fn default_mu_tha() -> f64 {
    1e-7
}

/// Measured source imperfections.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceFlaws {
    /// Relative intensity fluctuation.
    pub xi: f64,
    /// Phase shift (rad).
    pub delta: f64,
    /// Polarization amplitude ratio.
    pub tan_theta: f64,
    /// Pattern-effect phase deviation (rad).
    pub psi: f64,
    /// Reflected Trojan-horse intensity (photons).
    #[serde(default = "default_mu_tha")]
    pub mu_tha: f64,
    /// Pulse correlation; derived from `psi` at the evaluated intensity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_pattern: Option<f64>,
}

impl Default for SourceFlaws {
    fn default() -> Self {
        SourceFlaws::ideal()
    }
}

impl SourceFlaws {
    /// No flaws at all, including no Trojan-horse light.
    pub fn ideal() -> Self {
        SourceFlaws {
            xi: 0.0,
            delta: 0.0,
            tan_theta: 0.0,
            psi: 0.0,
            mu_tha: 0.0,
            epsilon_pattern: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.xi, self.delta, self.tan_theta, self.psi, self.mu_tha];
        if fields.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid(format!(
                "source flaws must be finite and >= 0: {self:?}"
            )));
        }
        if self.xi >= 1.0 {
            return Err(Error::invalid(format!(
                "intensity fluctuation {} must be < 1",
                self.xi
            )));
        }
        if let Some(e) = self.epsilon_pattern {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::invalid(format!(
                    "pattern correlation {e} outside [0,1)"
                )));
            }
        }
        Ok(())
    }

    /// `ε = 1 − exp(|α|²(2cos ψ − 2))` unless set explicitly.
    pub fn epsilon_at(&self, alpha_sq: f64) -> f64 {
        self.epsilon_pattern
            .unwrap_or_else(|| -(alpha_sq * (2.0 * self.psi.cos() - 2.0)).exp_m1())
    }
}

/// `⟨β|γ⟩` for coherent states.
fn overlap(b: Complex64, g: Complex64) -> Complex64 {
    (-(b.norm_sqr() + g.norm_sqr()) / 2.0 + b.conj() * g).exp()
}

/// The four weighted overlap terms, indexed `[x bit][y bit]`, prefactor included.
fn terms(flaws: &SourceFlaws, alpha_sq: f64) -> [[Complex64; 2]; 2] {
    let i = Complex64::i();
    let a = Complex64::new(alpha_sq.sqrt(), 0.0);
    let e = Complex64::from_polar(1.0, flaws.delta);
    let x = [a, -e * a];
    let y = [-i * e * a, i * e * a];
    let theta = flaws.tan_theta.atan();
    let pref =
        0.25 * (1.0 - flaws.epsilon_at(alpha_sq)) * (-flaws.mu_tha).exp() * theta.cos().powi(2);
    let one = Complex64::new(1.0, 0.0);
    let weight = [[one + i, one - i], [one - i, one + i]];
    let mut out = [[Complex64::default(); 2]; 2];
    for xb in 0..2 {
        for yb in 0..2 {
            out[xb][yb] = pref * weight[xb][yb] * overlap(x[xb], y[yb]);
        }
    }
    out
}

/// `⟨Ψ_X|Ψ_Y⟩` at actual intensity `alpha_sq`.
pub fn fidelity_imperfect(flaws: &SourceFlaws, alpha_sq: f64) -> Result<Complex64> {
    flaws.validate()?;
    if !(alpha_sq > 0.0 && alpha_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "intensity {alpha_sq} must be positive"
        )));
    }
    Ok(terms(flaws, alpha_sq).iter().flatten().sum())
}

/// Search settings for [`coin_imbalance_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoinOptions {
    /// Grid points per phase axis.
    pub grid: usize,
    /// Refinement stops once the step is below this (rad).
    pub step_tolerance: f64,
    pub max_iterations: usize,
}

impl Default for CoinOptions {
    fn default() -> Self {
        CoinOptions {
            grid: 64,
            step_tolerance: 1e-9,
            max_iterations: 10_000,
        }
    }
}

/// `|⟨Ψ_{Y,δY}|Ψ_{X,δX}⟩|`: the bit-1 branch of each basis picks up its free phase.
fn shifted_norm(t: &[[Complex64; 2]; 2], dx: f64, dy: f64) -> f64 {
    let ex = Complex64::from_polar(1.0, -dx);
    let ey = Complex64::from_polar(1.0, dy);
    (t[0][0] + t[1][0] * ex + t[0][1] * ey + t[1][1] * ex * ey).norm()
}

/// Max over `(δX, δY)` of the shifted overlap magnitude. The third free phase
/// only rotates the overlap, so maximizing `Re(e^{iδθ}z)` gives `|z|`.
/// Returns `(refined, grid_only, converged)`.
fn max_shifted(t: &[[Complex64; 2]; 2], opts: &CoinOptions) -> (f64, f64, bool) {
    let h = TAU / opts.grid as f64;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for gx in 0..opts.grid {
        for gy in 0..opts.grid {
            let (dx, dy) = (gx as f64 * h, gy as f64 * h);
            let v = shifted_norm(t, dx, dy);
            if v > best.0 {
                best = (v, dx, dy);
            }
        }
    }
    let grid_best = best.0;

    // Hooke–Jeeves pattern search from the best grid point.
    let f = |p: (f64, f64)| shifted_norm(t, p.0, p.1);
    let explore = |base: (f64, f64), fb: f64, step: f64| {
        let mut p = base;
        let mut fp = fb;
        for axis in 0..2 {
            for sign in [1.0, -1.0] {
                let mut q = p;
                if axis == 0 {
                    q.0 += sign * step;
                } else {
                    q.1 += sign * step;
                }
                let fq = f(q);
                if fq > fp {
                    p = q;
                    fp = fq;
                    break;
                }
            }
        }
        (p, fp)
    };
    let mut x = (best.1, best.2);
    let mut fx = grid_best;
    let mut step = h;
    let mut iterations = 0;
    while step >= opts.step_tolerance {
        iterations += 1;
        if iterations > opts.max_iterations {
            return (fx, grid_best, false);
        }
        let (y, fy) = explore(x, fx, step);
        if fy > fx {
            // Pattern move along the improving direction.
            let z = (2.0 * y.0 - x.0, 2.0 * y.1 - x.1);
            let (z2, fz) = explore(z, f(z), step);
            if fz > fy {
                x = z2;
                fx = fz;
            } else {
                x = y;
                fx = fy;
            }
        } else {
            step /= 2.0;
        }
    }
    (fx, grid_best, true)
}

/// Coin imbalance `Δ` with default search settings.
pub fn coin_imbalance(flaws: &SourceFlaws, alpha_sq: f64, gain: f64) -> Result<f64> {
    coin_imbalance_with(flaws, alpha_sq, gain, &CoinOptions::default())
}

/// `Δ = (1 − max_{δθ,δX,δY} Re(e^{iδθ}⟨Ψ_{Y,δY}|Ψ_{X,δX}⟩)·|⟨Ψ_Y|Ψ_X⟩|) / (2Q)`,
/// taking the worse of the two intensity extremes `α²(1 ± ξ)`.
///
/// If the refinement stalls, fails with [`Error::NonConvergence`] carrying
/// the `Δ` from the grid maximum alone, which is never smaller than the
/// refined value.
pub fn coin_imbalance_with(
    flaws: &SourceFlaws,
    alpha_sq: f64,
    gain: f64,
    opts: &CoinOptions,
) -> Result<f64> {
    flaws.validate()?;
    if !(gain > 0.0 && gain <= 1.0) {
        return Err(Error::invalid(format!("gain {gain} must lie in (0,1]")));
    }
    if !(alpha_sq > 0.0 && alpha_sq.is_finite()) {
        return Err(Error::invalid(format!(
            "intensity {alpha_sq} must be positive"
        )));
    }
    if opts.grid < 4 {
        return Err(Error::invalid(
            "coin search grid needs at least 4 points per axis",
        ));
    }
    let mut refined = 0f64;
    let mut grid_only = 0f64;
    let mut converged = true;
    for sign in [1.0, -1.0] {
        let a = alpha_sq * (1.0 + sign * flaws.xi);
        let t = terms(flaws, a);
        let base: Complex64 = t.iter().flatten().sum();
        let (best, grid_best, ok) = max_shifted(&t, opts);
        let to_delta = |m: f64| ((1.0 - m * base.norm()) / (2.0 * gain)).max(0.0);
        refined = refined.max(to_delta(best));
        grid_only = grid_only.max(to_delta(grid_best));
        converged &= ok;
    }
    if !converged {
        return Err(Error::NonConvergence {
            best_delta: grid_only,
        });
    }
    Ok(refined)
}
