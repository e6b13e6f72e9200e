//! Source-flaw characterization from bench measurements.
//!
//! Produces the four source-flaw parameters consumed by the coin bound:
//! intensity fluctuation from a power trace, phase shift from interference
//! counts, polarization leakage from an extinction ratio, and pattern-effect
//! deviation from symbol-conditioned click counts.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgp::{DetectorCounts, Phase};
use crate::security::SourceFlaws;

/// Relative deviation of a power trace: `max |P − P̄| / P̄` in linear units.
pub fn power_fluctuation(series_dbm: &[f64]) -> Result<f64> {
    if series_dbm.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "power trace needs at least 2 samples, got {}",
            series_dbm.len()
        )));
    }
    if series_dbm.iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("power trace contains a non-finite sample"));
    }
    let linear: Vec<f64> = series_dbm.iter().map(|p| 10f64.powf(p / 10.0)).collect();
    let mean = linear.iter().sum::<f64>() / linear.len() as f64;
    Ok(linear.iter().map(|p| (p - mean).abs()).fold(0.0, f64::max) / mean)
}

/// Counts at one nominal phase together with the `φ = 0` reference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftRecord {
    pub phi: Phase,
    pub d1: u64,
    pub d2: u64,
    pub d1_ref: u64,
    pub d2_ref: u64,
    pub eta_d1: f64,
    pub eta_d2: f64,
    pub eps: f64,
}

fn hoeffding(count: u64, eps: f64) -> (f64, f64) {
    let d = count as f64;
    let w = (d / 2.0 * (1.0 / eps).ln()).sqrt();
    (d - w, d + w)
}

/// Upper bound on the deviation of the applied phase from its nominal value.
///
/// Each count is widened by `sqrt(D/2 · ln(1/ε))`. The two extreme ratios
/// `(D2 ∓ D2,0)/η2 : (D1 ∓ D2,0)/η1` are inverted through
/// `φ0 = 2 atan sqrt(ratio)`, where `φ0 = φ` for `φ ≤ π` and `φ − π` above.
pub fn phase_shift_bound(rec: &PhaseShiftRecord) -> Result<f64> {
    if rec.phi == Phase::Zero {
        return Err(Error::invalid("the reference phase has no shift bound"));
    }
    if !(rec.eps > 0.0 && rec.eps <= 1.0) {
        return Err(Error::invalid(format!(
            "failure probability {} outside (0,1]",
            rec.eps
        )));
    }
    if !(rec.eta_d1 > 0.0 && rec.eta_d2 > 0.0) {
        return Err(Error::invalid("detector efficiencies must be positive"));
    }
    let phi = rec.phi.radians();
    let phi0 = if phi <= std::f64::consts::PI {
        phi
    } else {
        phi - std::f64::consts::PI
    };
    let (d1_lo, d1_hi) = hoeffding(rec.d1, rec.eps);
    let (d2_lo, d2_hi) = hoeffding(rec.d2, rec.eps);
    let (r2_lo, r2_hi) = hoeffding(rec.d2_ref, rec.eps);

    let branches = [
        ((d2_hi - r2_lo) / rec.eta_d2, (d1_lo - r2_hi) / rec.eta_d1),
        ((d2_lo - r2_hi) / rec.eta_d2, (d1_hi - r2_lo) / rec.eta_d1),
    ];
    let mut bound = 0f64;
    for (num, den) in branches {
        if num < 0.0 || den <= 0.0 {
            return Err(Error::InsufficientStatistics(format!(
                "counts at phase {} are too small for the fluctuation bound",
                rec.phi
            )));
        }
        bound = bound.max((phi0 - 2.0 * (num / den).sqrt().atan()).abs());
    }
    Ok(bound)
}

/// Interference counts for the four nominal phases.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseShiftTable {
    pub counts: BTreeMap<Phase, DetectorCounts>,
}

impl PhaseShiftTable {
    /// CSV with header `phi,D1,D2`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut counts = BTreeMap::new();
        for row in rdr.deserialize::<PhaseRow>() {
            let row = row?;
            let phi: Phase = row.phi.parse()?;
            if counts
                .insert(
                    phi,
                    DetectorCounts {
                        d1: row.d1,
                        d2: row.d2,
                    },
                )
                .is_some()
            {
                return Err(Error::format(format!("phase {phi} appears twice")));
            }
        }
        Ok(PhaseShiftTable { counts })
    }

    /// Bounds for every non-reference phase, in phase order.
    pub fn bounds(&self, eta_d1: f64, eta_d2: f64, eps: f64) -> Result<Vec<(Phase, f64)>> {
        let reference = self.counts.get(&Phase::Zero).ok_or_else(|| {
            Error::InsufficientData("phase table has no φ = 0 reference row".into())
        })?;
        self.counts
            .iter()
            .filter(|(p, _)| **p != Phase::Zero)
            .map(|(&phi, c)| {
                let rec = PhaseShiftRecord {
                    phi,
                    d1: c.d1,
                    d2: c.d2,
                    d1_ref: reference.d1,
                    d2_ref: reference.d2,
                    eta_d1,
                    eta_d2,
                    eps,
                };
                Ok((phi, phase_shift_bound(&rec)?))
            })
            .collect()
    }
}

#[derive(Deserialize)]
struct PhaseRow {
    phi: String,
    #[serde(rename = "D1")]
    d1: u64,
    #[serde(rename = "D2")]
    d2: u64,
}

/// Click counts conditioned on (previous symbol, current symbol).
/// `counts[current][previous]`, symbols numbered 0..4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTable {
    pub counts: [[u64; 4]; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternDeviation {
    pub per_group: [f64; 4],
    pub sin_psi: f64,
    pub psi: f64,
}

impl PatternTable {
    /// CSV with header `current,previous,count`; symbols written `S1`..`S4` or `1`..`4`.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut counts = [[None; 4]; 4];
        for row in rdr.deserialize::<PatternRow>() {
            let row = row?;
            let (c, p) = (symbol(&row.current)?, symbol(&row.previous)?);
            if counts[c][p].replace(row.count).is_some() {
                return Err(Error::format(format!(
                    "pattern cell {} -> {} appears twice",
                    row.previous, row.current
                )));
            }
        }
        let mut out = [[0u64; 4]; 4];
        for c in 0..4 {
            for p in 0..4 {
                out[c][p] = counts[c][p].ok_or_else(|| {
                    Error::format(format!("pattern cell S{} -> S{} missing", p + 1, c + 1))
                })?;
            }
        }
        Ok(PatternTable { counts: out })
    }
}

#[derive(Deserialize)]
struct PatternRow {
    current: String,
    previous: String,
    count: u64,
}

fn symbol(s: &str) -> Result<usize> {
    let digits = s.trim_start_matches(['S', 's']);
    match digits.parse::<usize>() {
        Ok(k @ 1..=4) => Ok(k - 1),
        _ => Err(Error::format(format!("unknown pattern symbol {s:?}"))),
    }
}

/// Largest relative deviation from the group mean, over the four
/// current-symbol groups; `ψ = asin` of it.
pub fn pattern_deviation(table: &PatternTable) -> Result<PatternDeviation> {
    let mut per_group = [0.0; 4];
    for (g, group) in table.counts.iter().enumerate() {
        let mean = group.iter().sum::<u64>() as f64 / 4.0;
        if mean == 0.0 {
            return Err(Error::InsufficientData(format!(
                "pattern group S{} has no counts",
                g + 1
            )));
        }
        per_group[g] = group
            .iter()
            .map(|&c| (c as f64 - mean).abs() / mean)
            .fold(0.0, f64::max);
    }
    let sin_psi = per_group.iter().copied().fold(0.0, f64::max);
    if sin_psi > 1.0 {
        return Err(Error::invalid(format!(
            "pattern deviation {sin_psi} exceeds 1"
        )));
    }
    Ok(PatternDeviation {
        per_group,
        sin_psi,
        psi: sin_psi.asin(),
    })
}

/// `ε = 1 − exp(α²(2cos ψ − 2))`.
pub fn pattern_epsilon(alpha_sq: f64, psi: f64) -> Result<f64> {
    if !(alpha_sq > 0.0) || !(0.0..std::f64::consts::FRAC_PI_2).contains(&psi) {
        return Err(Error::invalid(format!(
            "need alpha^2 > 0 and psi in [0, pi/2) (got {alpha_sq}, {psi})"
        )));
    }
    Ok(-(alpha_sq * (2.0 * psi.cos() - 2.0)).exp_m1())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarizationRatio {
    pub tan_theta: f64,
    pub extinction_db: f64,
}

/// Polarization leakage from the optical power along the fast and slow axes.
/// The leakage is taken as the power ratio itself, so an extinction of
/// `−30 dB` gives `tan θ = 10⁻³`.
pub fn polarization_ratio(power_fast: f64, power_slow: f64) -> Result<PolarizationRatio> {
    if !(power_fast > 0.0 && power_slow > 0.0) {
        return Err(Error::invalid(format!(
            "optical powers must be positive (got {power_fast}, {power_slow})"
        )));
    }
    let ratio = power_fast / power_slow;
    Ok(PolarizationRatio {
        tan_theta: ratio,
        extinction_db: 10.0 * ratio.log10(),
    })
}

/// `tan θ = 10^(dB/10)`.
pub fn tan_theta_from_db(extinction_db: f64) -> f64 {
    10f64.powf(extinction_db / 10.0)
}

/// Reads the `power_dbm` column of a CSV trace.
pub fn read_power_series<R: Read>(reader: R) -> Result<Vec<f64>> {
    #[derive(Deserialize)]
    struct Row {
        power_dbm: f64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<Row>().map(|r| Ok(r?.power_dbm)).collect()
}

/// Reads a polarization measurement: either an `extinction_db` column or a
/// pair of `fast_mw,slow_mw` columns. The first data row is used.
pub fn read_polarization<R: Read>(reader: R) -> Result<PolarizationRatio> {
    #[derive(Deserialize)]
    struct Row {
        extinction_db: Option<f64>,
        fast_mw: Option<f64>,
        slow_mw: Option<f64>,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let row: Row = rdr
        .deserialize()
        .next()
        .ok_or_else(|| Error::InsufficientData("polarization file has no rows".into()))??;
    match (row.extinction_db, row.fast_mw, row.slow_mw) {
        (Some(db), _, _) => Ok(PolarizationRatio {
            tan_theta: tan_theta_from_db(db),
            extinction_db: db,
        }),
        (None, Some(f), Some(s)) => polarization_ratio(f, s),
        _ => Err(Error::format(
            "polarization file needs extinction_db or fast_mw and slow_mw",
        )),
    }
}

/// Collects measured parameters into a flaw set for the coin bound.
pub fn source_flaws(
    xi: f64,
    delta: f64,
    tan_theta: f64,
    psi: f64,
    mu_tha: f64,
) -> Result<SourceFlaws> {
    let flaws = SourceFlaws {
        xi,
        delta,
        tan_theta,
        psi,
        mu_tha,
        epsilon_pattern: None,
    };
    flaws.validate()?;
    Ok(flaws)
}
