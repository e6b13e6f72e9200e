//! Four-phase MDI key generation.
//!
//! Two routes produce a [`DetectionSummary`]: [`simulate`] draws detector
//! outcomes from a parametric interference model, and [`replay`] loads a
//! measured per-phase count table. [`estimate`] turns either into error rates.
//!
//! The click model: merchant and peer pulses with phases `θ_M`, `θ_C` meet at
//! a balanced beam splitter. With arm transmittances `η_a`, `η_b` the mean
//! photon numbers at the two detectors are
//! `μ_(1,2) = |α|²/2 · (η_a + η_b ± 2 sqrt(η_a η_b) cos Δθ)`, and detector `i`
//! clicks with probability `1 − (1 − p_di) exp(−η_di μ_i)`. An event is
//! effective when exactly one detector clicks; on a D2 click the peer flips
//! its bit.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "π/2")]
    HalfPi,
    #[serde(rename = "π")]
    Pi,
    #[serde(rename = "3π/2")]
    ThreeHalfPi,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Zero, Phase::HalfPi, Phase::Pi, Phase::ThreeHalfPi];

    pub fn radians(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::Zero => 0.0,
            Phase::HalfPi => PI / 2.0,
            Phase::Pi => PI,
            Phase::ThreeHalfPi => 1.5 * PI,
        }
    }

    pub fn encode(basis: Basis, bit: bool) -> Phase {
        match (basis, bit) {
            (Basis::X, false) => Phase::Zero,
            (Basis::X, true) => Phase::Pi,
            (Basis::Y, false) => Phase::HalfPi,
            (Basis::Y, true) => Phase::ThreeHalfPi,
        }
    }

    pub fn basis(self) -> Basis {
        match self {
            Phase::Zero | Phase::Pi => Basis::X,
            Phase::HalfPi | Phase::ThreeHalfPi => Basis::Y,
        }
    }

    pub fn bit(self) -> bool {
        matches!(self, Phase::Pi | Phase::ThreeHalfPi)
    }

    pub fn label(self) -> &'static str {
        match self {
            Phase::Zero => "0",
            Phase::HalfPi => "π/2",
            Phase::Pi => "π",
            Phase::ThreeHalfPi => "3π/2",
        }
    }

    /// Parses one phase token from the front of `s`, returning the rest.
    fn parse_prefix(s: &str) -> Option<(Phase, &str)> {
        const TOKENS: [(&str, Phase); 4] = [
            ("3π/2", Phase::ThreeHalfPi),
            ("π/2", Phase::HalfPi),
            ("π", Phase::Pi),
            ("0", Phase::Zero),
        ];
        TOKENS
            .iter()
            .find_map(|(tok, ph)| s.strip_prefix(tok).map(|rest| (*ph, rest)))
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Accepts `0`, `π/2`, `π`, `3π/2` and the ASCII spellings `pi/2`, `pi`, `3pi/2`.
impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Phase> {
        let norm: String = s
            .replace("\\pi", "π")
            .replace("pi", "π")
            .replace("PI", "π")
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        match Phase::parse_prefix(&norm) {
            Some((p, "")) => Ok(p),
            _ => Err(Error::format(format!("unknown phase {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Basis {
    X,
    Y,
}

/// Parses a row label such as `Detected 0π`, `Detected π/2 3π/2` or
/// `Detected pi/2 3pi/2` into (merchant phase, peer phase).
pub fn parse_phase_label(label: &str) -> Result<(Phase, Phase)> {
    let body = label.trim();
    let body = body.strip_prefix("Detected").unwrap_or(body);
    let norm: String = body
        .replace("\\pi", "π")
        .replace("pi", "π")
        .replace("PI", "π")
        .chars()
        .filter(|c| !c.is_whitespace())
        .collect();
    let bad = || Error::format(format!("cannot parse phase pair from {label:?}"));
    let (m, rest) = Phase::parse_prefix(&norm).ok_or_else(bad)?;
    let (c, rest) = Phase::parse_prefix(rest).ok_or_else(bad)?;
    if !rest.is_empty() {
        return Err(bad());
    }
    Ok((m, c))
}

pub fn phase_label(merchant: Phase, peer: Phase) -> String {
    let sep = if merchant.basis() == Basis::Y {
        " "
    } else {
        ""
    };
    format!("Detected {}{sep}{}", merchant.label(), peer.label())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub eta_d1: f64,
    pub eta_d2: f64,
    /// Dark-count probability per detection window.
    pub p_d1: f64,
    pub p_d2: f64,
}

impl Default for DetectorConfig {
    /// 84.4% / 85.5% efficiency, 4.4 Hz / 2.5 Hz dark rate in a 2 ns window.
    fn default() -> Self {
        DetectorConfig {
            eta_d1: 0.844,
            eta_d2: 0.855,
            p_d1: 4.4 * 2e-9,
            p_d2: 2.5 * 2e-9,
        }
    }
}

fn default_rate() -> f64 {
    1e8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgpConfig {
    /// Pulse pairs sent, `N`.
    pub pulses: u64,
    pub p_x: f64,
    /// Mean photon number `|α|²` per pulse at the source.
    pub intensity: f64,
    /// Loss of the merchant arm and of the peer arm to the relay.
    pub loss_db: [f64; 2],
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub phase_noise_sigma: f64,
    /// Extra i.i.d. flips applied to the peer's sifted X key.
    #[serde(default)]
    pub flip_rate: f64,
    #[serde(default = "default_rate")]
    pub repetition_rate_hz: f64,
    pub seed: u64,
}

impl KgpConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.detector;
        let ok = self.p_x > 0.0
            && self.p_x < 1.0
            && self.intensity >= 0.0
            && self.loss_db.iter().all(|&l| l >= 0.0)
            && [d.eta_d1, d.eta_d2].iter().all(|&e| e > 0.0 && e <= 1.0)
            && [d.p_d1, d.p_d2].iter().all(|&p| (0.0..1.0).contains(&p))
            && self.phase_noise_sigma >= 0.0
            && (0.0..=0.5).contains(&self.flip_rate)
            && self.repetition_rate_hz > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid key-generation config: {self:?}"
            )))
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.pulses as f64 / self.repetition_rate_hz
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorCounts {
    #[serde(rename = "D1")]
    pub d1: u64,
    #[serde(rename = "D2")]
    pub d2: u64,
}

/// Effective-event counts for one (merchant phase, peer phase) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCount {
    pub merchant: Phase,
    pub peer: Phase,
    pub counts: DetectorCounts,
}

impl PhaseCount {
    /// Clicks at the detector inconsistent with the phase difference.
    pub fn errors(&self) -> u64 {
        if self.merchant == self.peer {
            self.counts.d2
        } else {
            self.counts.d1
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<u64>,
    pub n: u64,
    pub n_x: u64,
    pub n_y: u64,
    pub per_phase_counts: Vec<PhaseCount>,
    pub m_y: u64,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DetectionSummary {
    pub fn count(&self, merchant: Phase, peer: Phase) -> Option<DetectorCounts> {
        self.per_phase_counts
            .iter()
            .find(|c| c.merchant == merchant && c.peer == peer)
            .map(|c| c.counts)
    }

    /// Gain `Q = n / N`, when the pulse count is known.
    pub fn gain(&self) -> Option<f64> {
        self.pulses
            .filter(|&p| p > 0)
            .map(|p| self.n as f64 / p as f64)
    }
}

fn y_errors(cells: &[PhaseCount]) -> u64 {
    cells
        .iter()
        .filter(|c| c.merchant.basis() == Basis::Y && c.peer.basis() == Basis::Y)
        .map(PhaseCount::errors)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiftedKeys {
    pub merchant_bits: BitString,
    pub peer_bits: BitString,
    pub e_b_x: f64,
    pub e_b_y: f64,
}

/// Outcome probabilities (D1 only, D2 only, both) for one pulse pair.
fn click_probs(cfg: &KgpConfig, dtheta: f64) -> [f64; 3] {
    let eta_a = 10f64.powf(-cfg.loss_db[0] / 10.0);
    let eta_b = 10f64.powf(-cfg.loss_db[1] / 10.0);
    let a2 = cfg.intensity;
    let cross = 2.0 * (eta_a * eta_b).sqrt() * dtheta.cos();
    let mu1 = (a2 / 2.0 * (eta_a + eta_b + cross)).max(0.0);
    let mu2 = (a2 / 2.0 * (eta_a + eta_b - cross)).max(0.0);
    let d = &cfg.detector;
    let p1 = 1.0 - (1.0 - d.p_d1) * (-d.eta_d1 * mu1).exp();
    let p2 = 1.0 - (1.0 - d.p_d2) * (-d.eta_d2 * mu2).exp();
    [p1 * (1.0 - p2), (1.0 - p1) * p2, p1 * p2]
}

/// Averages [`click_probs`] over Gaussian phase noise with the trapezoid rule
/// on `±8σ`.
fn noisy_click_probs(cfg: &KgpConfig, dtheta: f64) -> [f64; 3] {
    let sigma = cfg.phase_noise_sigma;
    if sigma == 0.0 {
        return click_probs(cfg, dtheta);
    }
    const STEPS: usize = 256;
    let h = 16.0 * sigma / STEPS as f64;
    let mut acc = [0.0; 3];
    let mut wsum = 0.0;
    for k in 0..=STEPS {
        let x = -8.0 * sigma + k as f64 * h;
        let mut w = (-0.5 * (x / sigma).powi(2)).exp();
        if k == 0 || k == STEPS {
            w *= 0.5;
        }
        let p = click_probs(cfg, dtheta + x);
        for i in 0..3 {
            acc[i] += w * p[i];
        }
        wsum += w;
    }
    acc.map(|a| a / wsum)
}

fn binomial<R: Rng>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p)
        .expect("probability in (0,1)")
        .sample(rng)
}

/// Sequential-binomial multinomial draw.
fn multinomial<R: Rng>(rng: &mut R, n: u64, probs: &[f64]) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(probs.len());
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(left);
            break;
        }
        let k = if mass <= 0.0 {
            0
        } else {
            binomial(rng, left, (p / mass).min(1.0))
        };
        out.push(k);
        left -= k;
        mass -= p;
    }
    out
}

/// Draws a run from the click model.
///
/// Pulse pairs are aggregated by (basis, bit) combination and sampled with
/// multinomial draws, so the cost is independent of `N` apart from the
/// sifted key itself. Fixed seed, fixed output.
pub fn simulate(cfg: &KgpConfig) -> Result<(DetectionSummary, SiftedKeys)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, "kgp/simulate");
    let combos: Vec<(Phase, Phase)> = Phase::ALL
        .iter()
        .flat_map(|&m| Phase::ALL.iter().map(move |&c| (m, c)))
        .collect();
    let p_basis = |b: Basis| {
        if b == Basis::X {
            cfg.p_x
        } else {
            1.0 - cfg.p_x
        }
    };
    let combo_probs: Vec<f64> = combos
        .iter()
        .map(|(m, c)| p_basis(m.basis()) * p_basis(c.basis()) / 4.0)
        .collect();
    let combo_counts = multinomial(&mut rng, cfg.pulses, &combo_probs);

    let (mut n, mut n_x, mut n_y) = (0u64, 0u64, 0u64);
    let mut cells = Vec::new();
    let mut pairs: Vec<(bool, bool)> = Vec::new();
    for (&(m, c), &count) in combos.iter().zip(&combo_counts) {
        let p = noisy_click_probs(cfg, m.radians() - c.radians());
        let none = (1.0 - p[0] - p[1] - p[2]).max(0.0);
        let outcome = multinomial(&mut rng, count, &[p[0], p[1], p[2], none]);
        let (d1, d2) = (outcome[0], outcome[1]);
        n += d1 + d2;
        if m.basis() != c.basis() {
            continue;
        }
        cells.push(PhaseCount {
            merchant: m,
            peer: c,
            counts: DetectorCounts { d1, d2 },
        });
        match m.basis() {
            Basis::Y => n_y += d1 + d2,
            Basis::X => {
                n_x += d1 + d2;
                // Peer flips on D2.
                pairs.extend(std::iter::repeat((m.bit(), c.bit())).take(d1 as usize));
                pairs.extend(std::iter::repeat((m.bit(), !c.bit())).take(d2 as usize));
            }
        }
    }
    cells.sort_by_key(|c| (c.merchant.basis() == Basis::Y, c.merchant, c.peer));
    let m_y = y_errors(&cells);

    let perm = rng::permutation(&mut rng, pairs.len());
    let mut merchant_bits = BitString::zeros(pairs.len());
    let mut peer_bits = BitString::zeros(pairs.len());
    for (dst, &src) in perm.iter().enumerate() {
        let (a, b) = pairs[src as usize];
        merchant_bits.set(dst, a);
        peer_bits.set(dst, b);
    }
    if cfg.flip_rate > 0.0 && !pairs.is_empty() {
        let flips = binomial(&mut rng, pairs.len() as u64, cfg.flip_rate) as usize;
        for i in rand::seq::index::sample(&mut rng, pairs.len(), flips) {
            peer_bits.flip(i);
        }
    }

    let mut warnings = Vec::new();
    if n == 0 {
        log::warn!("simulation produced no effective events");
        warnings.push("no effective events".to_string());
    }
    let e_b_x = if n_x > 0 {
        merchant_bits.hamming_distance(&peer_bits) as f64 / n_x as f64
    } else {
        0.0
    };
    let e_b_y = if n_y > 0 {
        m_y as f64 / n_y as f64
    } else {
        0.0
    };
    let summary = DetectionSummary {
        label: None,
        pulses: Some(cfg.pulses),
        n,
        n_x,
        n_y,
        per_phase_counts: cells,
        m_y,
        duration_s: cfg.duration_s(),
        warnings,
    };
    let sifted = SiftedKeys {
        merchant_bits,
        peer_bits,
        e_b_x,
        e_b_y,
    };
    Ok((summary, sifted))
}

/// A measured count table: aggregate counts plus the per-phase cells keyed
/// by their row labels (`"Detected 0π"` → `{"D1": …, "D2": …}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pulses: Option<u64>,
    pub n: Option<u64>,
    pub n_x: Option<u64>,
    pub n_y: Option<u64>,
    #[serde(default)]
    pub detected: BTreeMap<String, DetectorCounts>,
}

impl CountTable {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// CSV with header `field,D1,D2`. Rows `pulses`, `n`, `n_x`, `n_y` carry
    /// their value in the `D1` column; `Detected …` rows carry both counts.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut table = CountTable {
            label: None,
            pulses: None,
            n: None,
            n_x: None,
            n_y: None,
            detected: BTreeMap::new(),
        };
        let parse = |s: Option<&str>, what: &str| -> Result<u64> {
            s.filter(|v| !v.is_empty())
                .ok_or_else(|| Error::format(format!("missing value for {what}")))?
                .parse::<u64>()
                .map_err(|e| Error::format(format!("bad count for {what}: {e}")))
        };
        for rec in rdr.records() {
            let rec = rec?;
            let field = rec.get(0).unwrap_or_default();
            match field {
                "label" => table.label = rec.get(1).map(str::to_string),
                "pulses" | "N" => table.pulses = Some(parse(rec.get(1), field)?),
                "n" => table.n = Some(parse(rec.get(1), field)?),
                "n_x" => table.n_x = Some(parse(rec.get(1), field)?),
                "n_y" => table.n_y = Some(parse(rec.get(1), field)?),
                "" => {}
                _ => {
                    table.detected.insert(
                        field.to_string(),
                        DetectorCounts {
                            d1: parse(rec.get(1), field)?,
                            d2: parse(rec.get(2), field)?,
                        },
                    );
                }
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            CountTable::from_csv_reader(std::fs::File::open(path)?)
        } else {
            CountTable::from_json_str(&std::fs::read_to_string(path)?)
        }
    }
}

/// Builds a summary from a measured table.
pub fn replay(table: &CountTable, duration_s: f64) -> Result<DetectionSummary> {
    let missing = |f: &str| Error::format(format!("count table is missing {f}"));
    let n = table.n.ok_or_else(|| missing("n"))?;
    let n_x = table.n_x.ok_or_else(|| missing("n_x"))?;
    let n_y = table.n_y.ok_or_else(|| missing("n_y"))?;
    if n_x + n_y > n {
        return Err(Error::format(format!(
            "n_x + n_y = {} exceeds n = {n}",
            n_x + n_y
        )));
    }
    if !(duration_s > 0.0) {
        return Err(Error::invalid("duration must be positive"));
    }
    let mut cells = Vec::with_capacity(8);
    for (label, counts) in &table.detected {
        let (merchant, peer) = parse_phase_label(label)?;
        if merchant.basis() != peer.basis() {
            return Err(Error::format(format!("{label:?} mixes bases")));
        }
        if cells
            .iter()
            .any(|c: &PhaseCount| c.merchant == merchant && c.peer == peer)
        {
            return Err(Error::format(format!("duplicate row for {label:?}")));
        }
        cells.push(PhaseCount {
            merchant,
            peer,
            counts: *counts,
        });
    }
    if cells.len() != 8 {
        return Err(Error::format(format!(
            "expected 8 phase-pair rows, found {}",
            cells.len()
        )));
    }
    cells.sort_by_key(|c| (c.merchant.basis() == Basis::Y, c.merchant, c.peer));
    let m_y = y_errors(&cells);
    Ok(DetectionSummary {
        label: table.label.clone(),
        pulses: table.pulses,
        n,
        n_x,
        n_y,
        per_phase_counts: cells,
        m_y,
        duration_s,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    Sifted,
    Configured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub e_b_x: f64,
    pub e_b_y: f64,
    pub m_y: u64,
    pub n_y: u64,
    pub e_b_x_source: RateSource,
}

/// `E_b^y = m_y / n_y`; `E_b^x` from the sifted strings when present,
/// otherwise from `configured_e_b_x`.
pub fn estimate(
    summary: &DetectionSummary,
    sifted: Option<&SiftedKeys>,
    configured_e_b_x: Option<f64>,
) -> Result<ErrorRates> {
    if summary.n_y == 0 {
        return Err(Error::InsufficientData("no Y-basis events".into()));
    }
    let e_b_y = summary.m_y as f64 / summary.n_y as f64;
    let (e_b_x, e_b_x_source) = match (sifted, configured_e_b_x) {
        (Some(s), _) if !s.merchant_bits.is_empty() => (
            s.merchant_bits.hamming_distance(&s.peer_bits) as f64 / s.merchant_bits.len() as f64,
            RateSource::Sifted,
        ),
        (_, Some(e)) if (0.0..=1.0).contains(&e) => (e, RateSource::Configured),
        (_, Some(e)) => return Err(Error::invalid(format!("E_b^x {e} outside [0,1]"))),
        _ => {
            return Err(Error::InsufficientData(
                "no sifted key and no configured X-basis error rate".into(),
            ))
        }
    };
    Ok(ErrorRates {
        e_b_x,
        e_b_y,
        m_y: summary.m_y,
        n_y: summary.n_y,
        e_b_x_source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_config() -> KgpConfig {
        KgpConfig {
            pulses: 10_000_000_000,
            p_x: 0.9,
            intensity: 4.2e-3,
            loss_db: [10.0, 10.0],
            detector: DetectorConfig::default(),
            phase_noise_sigma: 0.0,
            flip_rate: 0.0,
            repetition_rate_hz: 1e8,
            seed: 42,
        }
    }

    #[test]
    fn labels_parse_with_and_without_spaces() {
        assert_eq!(
            parse_phase_label("Detected 00").unwrap(),
            (Phase::Zero, Phase::Zero)
        );
        assert_eq!(
            parse_phase_label("Detected 0π").unwrap(),
            (Phase::Zero, Phase::Pi)
        );
        assert_eq!(
            parse_phase_label("Detected ππ").unwrap(),
            (Phase::Pi, Phase::Pi)
        );
        assert_eq!(
            parse_phase_label("Detected π/2 3π/2").unwrap(),
            (Phase::HalfPi, Phase::ThreeHalfPi)
        );
        assert_eq!(
            parse_phase_label("Detected 3pi/2 pi/2").unwrap(),
            (Phase::ThreeHalfPi, Phase::HalfPi)
        );
        assert!(parse_phase_label("Detected π").is_err());
        assert!(parse_phase_label("Detected 0 π 0").is_err());
        for m in Phase::ALL {
            for c in Phase::ALL {
                assert_eq!(parse_phase_label(&phase_label(m, c)).unwrap(), (m, c));
            }
        }
    }

    #[test]
    fn dark_light_gives_no_events() {
        let mut cfg = base_config();
        cfg.intensity = 0.0;
        cfg.detector.p_d1 = 0.0;
        cfg.detector.p_d2 = 0.0;
        let (s, k) = simulate(&cfg).unwrap();
        assert_eq!(s.n, 0);
        assert!(k.merchant_bits.is_empty());
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn noiseless_run_is_error_free() {
        let mut cfg = base_config();
        cfg.pulses = 1_000_000_000;
        cfg.detector.p_d1 = 0.0;
        cfg.detector.p_d2 = 0.0;
        let (s, k) = simulate(&cfg).unwrap();
        assert!(s.n_x > 0 && s.n_y > 0);
        assert_eq!(s.m_y, 0);
        assert_eq!(k.e_b_x, 0.0);
        assert_eq!(k.merchant_bits, k.peer_bits);
    }

    #[test]
    fn operating_point_is_within_factor_two_of_measurement() {
        let (s, k) = simulate(&base_config()).unwrap();
        let measured = 4_424_989f64;
        let ratio = s.n_x as f64 / measured;
        assert!((0.5..=2.0).contains(&ratio), "n_x = {}", s.n_x);
        assert_eq!(k.merchant_bits.len() as u64, s.n_x);
        assert!(s.n_x + s.n_y <= s.n);
    }

    #[test]
    fn simulation_is_reproducible_and_seed_sensitive() {
        let mut cfg = base_config();
        cfg.pulses = 100_000_000;
        cfg.phase_noise_sigma = 0.1;
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        assert_ne!(simulate(&cfg).unwrap().1.merchant_bits, a.1.merchant_bits);
    }

    #[test]
    fn effective_events_fall_with_loss() {
        let mut cfg = base_config();
        cfg.pulses = 1_000_000_000;
        let mut last = u64::MAX;
        for loss in [0.0, 2.0, 5.0, 8.0, 12.0, 16.0, 20.0] {
            cfg.loss_db = [loss, loss];
            let (s, _) = simulate(&cfg).unwrap();
            assert!(s.n <= last, "n rose at {loss} dB");
            last = s.n;
        }
    }

    #[test]
    fn phase_noise_produces_errors() {
        let mut cfg = base_config();
        cfg.pulses = 1_000_000_000;
        cfg.phase_noise_sigma = 0.2;
        let (s, k) = simulate(&cfg).unwrap();
        // Error probability ≈ (1 − E[cos]) / 2 = (1 − e^(−σ²/2)) / 2 ≈ 0.00995.
        let expect = (1.0 - (-0.02f64).exp()) / 2.0;
        assert!((k.e_b_x - expect).abs() < 0.002, "{}", k.e_b_x);
        assert!(s.m_y > 0);
    }

    #[test]
    fn forced_flips_show_up_in_estimate() {
        let mut cfg = base_config();
        cfg.pulses = 2_000_000_000;
        cfg.detector.p_d1 = 0.0;
        cfg.detector.p_d2 = 0.0;
        cfg.flip_rate = 0.01;
        let (s, k) = simulate(&cfg).unwrap();
        let rates = estimate(&s, Some(&k), None).unwrap();
        let nx = s.n_x as f64;
        let sd = (0.01 * 0.99 / nx).sqrt();
        assert!((rates.e_b_x - 0.01).abs() <= 3.0 * sd, "{}", rates.e_b_x);
        assert_eq!(rates.e_b_x_source, RateSource::Sifted);
    }

    fn table(n: u64, n_x: u64, n_y: u64, rows: &[(&str, u64, u64)]) -> CountTable {
        CountTable {
            label: None,
            pulses: Some(10_000_000_000),
            n: Some(n),
            n_x: Some(n_x),
            n_y: Some(n_y),
            detected: rows
                .iter()
                .map(|(l, d1, d2)| (l.to_string(), DetectorCounts { d1: *d1, d2: *d2 }))
                .collect(),
        }
    }

    fn fifteen_db() -> CountTable {
        table(
            17_189_504,
            13_919_127,
            189_603,
            &[
                ("Detected 00", 3_298_168, 1_733),
                ("Detected 0π", 4_570, 3_685_584),
                ("Detected π0", 5_660, 3_734_246),
                ("Detected ππ", 3_186_629, 2_537),
                ("Detected π/2 π/2", 34_766, 26),
                ("Detected π/2 3π/2", 22, 59_559),
                ("Detected 3π/2 π/2", 43, 53_998),
                ("Detected 3π/2 3π/2", 41_141, 48),
            ],
        )
    }

    #[test]
    fn replay_counts_y_errors() {
        let s = replay(&fifteen_db(), 100.0).unwrap();
        assert_eq!((s.n, s.n_x, s.n_y), (17_189_504, 13_919_127, 189_603));
        assert_eq!(s.m_y, (26 + 48) + (22 + 43));
        let r = estimate(&s, None, Some(0.001)).unwrap();
        assert!((r.e_b_y * 100.0 - 0.07).abs() < 0.005);
        assert_eq!(r.e_b_x_source, RateSource::Configured);
        assert!((s.gain().unwrap() - 1.7189504e-3).abs() < 1e-12);
    }

    #[test]
    fn replay_rejects_bad_tables() {
        let mut t = fifteen_db();
        t.n = None;
        assert!(matches!(replay(&t, 100.0), Err(Error::Format(_))));
        let t = table(10, 8, 5, &[]);
        assert!(matches!(replay(&t, 100.0), Err(Error::Format(_))));
        let t = table(0, 0, 0, &[]);
        assert!(matches!(replay(&t, 100.0), Err(Error::Format(_))));
        let mut t = fifteen_db();
        t.detected.remove("Detected 00");
        assert!(replay(&t, 100.0).is_err());
    }

    #[test]
    fn csv_and_json_tables_agree() {
        let csv = "field,D1,D2\npulses,10000000000,\nn,17189504,\nn_x,13919127,\nn_y,189603,\n\
                   Detected 00,3298168,1733\nDetected 0pi,4570,3685584\nDetected pi0,5660,3734246\n\
                   Detected pi pi,3186629,2537\nDetected pi/2 pi/2,34766,26\nDetected pi/2 3pi/2,22,59559\n\
                   Detected 3pi/2 pi/2,43,53998\nDetected 3pi/2 3pi/2,41141,48\n";
        let from_csv =
            replay(&CountTable::from_csv_reader(csv.as_bytes()).unwrap(), 100.0).unwrap();
        let json = serde_json::to_string(&fifteen_db()).unwrap();
        let from_json = replay(&CountTable::from_json_str(&json).unwrap(), 100.0).unwrap();
        assert_eq!(from_csv, from_json);
    }

    #[test]
    fn estimate_needs_y_events() {
        let mut s = replay(&fifteen_db(), 100.0).unwrap();
        s.m_y = 0;
        assert_eq!(estimate(&s, None, Some(0.0)).unwrap().e_b_y, 0.0);
        s.n_y = 0;
        assert!(matches!(
            estimate(&s, None, Some(0.0)),
            Err(Error::InsufficientData(_))
        ));
    }
}
