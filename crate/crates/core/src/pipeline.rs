//! End-to-end run: characterization, key generation, reconciliation,
//! security, then one signing round.
//!
//! Two channels feed the run, merchant–client and merchant–TP. In `replay`
//! mode each channel's detections come from a measured count table and the
//! sifted keys are synthesized at the configured X-basis error rate; in
//! `simulate` mode both come from the click model. The report is a pure
//! function of the configuration, the seed and the referenced files.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::cascade::{self, CascadeConfig};
use crate::charize;
use crate::error::{Error, Result};
use crate::kgp::{self, CountTable, KgpConfig};
use crate::protocol::{self, Adversary, ChannelKeys, Contract, Outcome, Scenario, Transcript};
use crate::rng;
use crate::security::{
    self, coin_imbalance, EntropyInputs, PhaseErrorSource, SecurityBudget, SecurityResult,
    SourceFlaws, SystemRate,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Replay,
}

/// Measurement files for deriving the source flaws of a channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharacterizationInputs {
    pub power_csv: PathBuf,
    pub phase_csv: PathBuf,
    pub pattern_csv: PathBuf,
    pub polarization_csv: PathBuf,
    #[serde(default = "default_eta1")]
    pub eta_d1: f64,
    #[serde(default = "default_eta2")]
    pub eta_d2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_mu_tha")]
    pub mu_tha: f64,
}

fn default_eta1() -> f64 {
    0.844
}
fn default_eta2() -> f64 {
    0.855
}
fn default_eps() -> f64 {
    1e-10
}
fn default_mu_tha() -> f64 {
    1e-7
}
fn default_duration() -> f64 {
    100.0
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// Count table (replay).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<PathBuf>,
    /// Click model (simulate). Its seed is replaced by one derived from the run seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kgp: Option<KgpConfig>,
    /// Mean photon number per pulse; taken from `kgp` when simulating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity: Option<f64>,
    /// X-basis error rate; required for replay.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_b_x: Option<f64>,
    /// Disclosed reconciliation bits; measured by reconciliation when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leak_ec: Option<f64>,
    /// Phase-error input; derived from the source flaws when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_error: Option<PhaseErrorSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flaws: Option<SourceFlaws>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub characterization: Option<CharacterizationInputs>,
    /// Overrides the gain `n / N` used by the coin bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub budget: SecurityBudget,
    #[serde(default)]
    pub cascade: CascadeConfig,
    /// Acquisition time of a replayed table (s).
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub contract: ContractSource,
    /// Message length the security level is planned for; at least the contract's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_bits: Option<u64>,
    #[serde(default)]
    pub adversary: Adversary,
    pub merchant_client: ChannelConfig,
    pub merchant_tp: ChannelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ContractSource {
    Inline(Contract),
    Path(PathBuf),
}

impl PipelineConfig {
    /// Loads a JSON config; relative paths inside it resolve against its directory.
    pub fn load(path: &Path) -> Result<(PipelineConfig, PathBuf)> {
        let cfg: PipelineConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadeSummary {
    pub leaked_bits: usize,
    pub checksum_bits: usize,
    pub passes_used: usize,
    pub corrections: usize,
    pub residual_mismatch: bool,
    pub efficiency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub name: String,
    pub mu: f64,
    pub n: u64,
    pub n_x: u64,
    pub n_y: u64,
    pub m_y: u64,
    pub e_b_x: f64,
    pub e_b_y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flaws: Option<SourceFlaws>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coin_imbalance: Option<f64>,
    pub phase_error: PhaseErrorSource,
    pub e_p_bar: f64,
    pub leak_ec: f64,
    pub cascade: CascadeSummary,
    pub duration_s: f64,
    pub security: SecurityResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: Mode,
    pub seed: u64,
    pub message_bits: u64,
    pub budget: SecurityBudget,
    pub channels: Vec<ChannelReport>,
    pub system: SystemRate,
    pub outcome: Outcome,
    pub transcript: Transcript,
}

impl PipelineReport {
    /// 0 when the contract completed, 2 when it was aborted.
    pub fn exit_code(&self) -> i32 {
        match self.outcome {
            Outcome::Completed => 0,
            Outcome::Aborted => 2,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct ChannelRun {
    report: ChannelReport,
    keys: ChannelKeys,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn characterize(inputs: &CharacterizationInputs, base: &Path) -> Result<SourceFlaws> {
    let open = |p: &Path| std::fs::File::open(resolve(base, p));
    let xi = charize::power_fluctuation(&charize::read_power_series(open(&inputs.power_csv)?)?)?;
    let delta = charize::PhaseShiftTable::from_csv_reader(open(&inputs.phase_csv)?)?
        .bounds(inputs.eta_d1, inputs.eta_d2, inputs.eps)?
        .into_iter()
        .map(|(_, b)| b)
        .fold(0.0, f64::max);
    let psi = charize::pattern_deviation(&charize::PatternTable::from_csv_reader(open(
        &inputs.pattern_csv,
    )?)?)?
    .psi;
    let tan_theta = charize::read_polarization(open(&inputs.polarization_csv)?)?.tan_theta;
    charize::source_flaws(xi, delta, tan_theta, psi, inputs.mu_tha)
}

fn synthesize_keys(len: u64, e_b_x: f64, seed: u64, name: &str) -> (BitString, BitString) {
    let mut r = rng::stream(seed, &format!("pipeline/{name}/keys"));
    let a = BitString::from_bools((0..len).map(|_| r.gen::<bool>()));
    let mut b = a.clone();
    for i in 0..a.len() {
        if r.gen_bool(e_b_x) {
            b.flip(i);
        }
    }
    (a, b)
}

fn run_channel(
    name: &str,
    ch: &ChannelConfig,
    cfg: &PipelineConfig,
    seed: u64,
    base: &Path,
    message_bits: u64,
) -> Result<ChannelRun> {
    let flaws = match (&ch.characterization, ch.flaws) {
        (Some(inputs), _) => Some(characterize(inputs, base).map_err(|e| e.in_stage("charize"))?),
        (None, f) => f,
    };

    let (summary, mu, e_b_x, merchant_key, peer_key) = match cfg.mode {
        Mode::Replay => {
            let path = ch
                .detection
                .as_ref()
                .ok_or_else(|| Error::invalid(format!("{name}: replay needs a detection table")))?;
            let table = CountTable::load(&resolve(base, path)).map_err(|e| e.in_stage("kgp"))?;
            let summary = kgp::replay(&table, cfg.duration_s).map_err(|e| e.in_stage("kgp"))?;
            let mu = ch.intensity.ok_or_else(|| {
                Error::invalid(format!("{name}: replay needs the pulse intensity"))
            })?;
            let e_b_x = ch
                .e_b_x
                .ok_or_else(|| Error::invalid(format!("{name}: replay needs e_b_x")))?;
            if !(0.0..=0.5).contains(&e_b_x) {
                return Err(Error::invalid(format!(
                    "{name}: e_b_x {e_b_x} outside [0, 0.5]"
                )));
            }
            let (a, b) = synthesize_keys(summary.n_x, e_b_x, seed, name);
            (summary, mu, e_b_x, a, b)
        }
        Mode::Simulate => {
            let mut k = ch
                .kgp
                .clone()
                .ok_or_else(|| Error::invalid(format!("{name}: simulate needs a kgp config")))?;
            k.seed = rng::child_seed(seed, &format!("pipeline/{name}/kgp"));
            if k.intensity <= 0.0 {
                return Err(
                    Error::Infeasible(format!("{name}: zero intensity carries no key"))
                        .in_stage("security"),
                );
            }
            let (summary, sifted) = kgp::simulate(&k).map_err(|e| e.in_stage("kgp"))?;
            let rates =
                kgp::estimate(&summary, Some(&sifted), None).map_err(|e| e.in_stage("kgp"))?;
            (
                summary,
                k.intensity,
                rates.e_b_x,
                sifted.merchant_bits,
                sifted.peer_bits,
            )
        }
    };
    if summary.n_y == 0 {
        return Err(Error::InsufficientData(format!("{name}: no Y-basis events")).in_stage("kgp"));
    }
    let e_b_y = summary.m_y as f64 / summary.n_y as f64;

    let cascade_cfg = CascadeConfig {
        permutation_seed: rng::child_seed(seed, &format!("pipeline/{name}/cascade")),
        ..cfg.cascade.clone()
    };
    let rec = cascade::reconcile(&merchant_key, &peer_key, &cascade_cfg)
        .map_err(|e| e.in_stage("cascade"))?;
    let cascade_summary = CascadeSummary {
        leaked_bits: rec.leaked_bits,
        checksum_bits: rec.checksum_bits,
        passes_used: rec.passes_used,
        corrections: rec.corrections,
        residual_mismatch: rec.residual_mismatch,
        efficiency: if e_b_x > 0.0 && !merchant_key.is_empty() {
            rec.efficiency(merchant_key.len(), e_b_x)
        } else {
            0.0
        },
    };
    let leak_ec = ch.leak_ec.unwrap_or(rec.total_leak() as f64);

    let gain = ch.gain.or_else(|| summary.gain());
    let (phase_error, delta) = match ch.phase_error {
        Some(src) => (src, None),
        None => {
            let flaws = flaws.unwrap_or_default();
            let q = gain.ok_or_else(|| {
                Error::InsufficientData(format!(
                    "{name}: the coin bound needs the pulse count or a gain"
                ))
            })?;
            if !(mu > 0.0) {
                return Err(
                    Error::Infeasible(format!("{name}: zero intensity carries no key"))
                        .in_stage("security"),
                );
            }
            let d = coin_imbalance(&flaws, mu, q).map_err(|e| e.in_stage("security"))?;
            (PhaseErrorSource::Coin { delta: d }, Some(d))
        }
    };
    let inputs = EntropyInputs::from_summary(&summary, leak_ec);
    let e_p_bar = security::phase_error_bound(&inputs, phase_error, &cfg.budget)
        .map_err(|e| e.in_stage("security"))?
        .2;
    let sec = security::optimize_n(
        &inputs,
        phase_error,
        &cfg.budget,
        message_bits,
        summary.duration_s,
    )
    .map_err(|e| e.in_stage("security"))?;

    Ok(ChannelRun {
        report: ChannelReport {
            name: name.to_string(),
            mu,
            n: summary.n,
            n_x: summary.n_x,
            n_y: summary.n_y,
            m_y: summary.m_y,
            e_b_x,
            e_b_y,
            flaws,
            gain,
            coin_imbalance: delta,
            phase_error,
            e_p_bar,
            leak_ec,
            cascade: cascade_summary,
            duration_s: summary.duration_s,
            security: sec,
        },
        keys: ChannelKeys {
            merchant: merchant_key,
            peer: rec.corrected_peer_key,
        },
    })
}

/// Errors not raised inside a stage come from the channel configuration.
fn config_stage(e: Error) -> Error {
    match e {
        Error::Stage { .. } => e,
        other => other.in_stage("config"),
    }
}

fn prepare(cfg: &PipelineConfig, base: &Path) -> Result<(u64, Contract, u64)> {
    cfg.budget.validate()?;
    let seed = match (cfg.mode, cfg.seed) {
        (_, Some(s)) => s,
        (Mode::Replay, None) => 0,
        (Mode::Simulate, None) => return Err(Error::invalid("simulate mode needs a seed")),
    };
    let contract = match &cfg.contract {
        ContractSource::Inline(c) => c.clone(),
        ContractSource::Path(p) => {
            serde_json::from_str(&std::fs::read_to_string(resolve(base, p))?)?
        }
    };
    let contract_bits = contract.bit_len() as u64;
    let message_bits = cfg.message_bits.unwrap_or(contract_bits);
    if message_bits < contract_bits {
        return Err(Error::invalid(format!(
            "message_bits {message_bits} is shorter than the {contract_bits}-bit contract"
        )));
    }
    Ok((seed, contract, message_bits))
}

/// Runs every stage; `base` resolves relative paths in the config.
pub fn run_pipeline(cfg: &PipelineConfig, base: &Path) -> Result<PipelineReport> {
    let (seed, contract, message_bits) = prepare(cfg, base).map_err(|e| e.in_stage("config"))?;

    let mc = run_channel(
        "merchant-client",
        &cfg.merchant_client,
        cfg,
        seed,
        base,
        message_bits,
    )
    .map_err(config_stage)?;
    let mt = run_channel(
        "merchant-tp",
        &cfg.merchant_tp,
        cfg,
        seed,
        base,
        message_bits,
    )
    .map_err(config_stage)?;
    let system = security::system_rate(&[
        (mc.report.security.clone(), mc.report.duration_s),
        (mt.report.security.clone(), mt.report.duration_s),
    ])
    .map_err(|e| e.in_stage("security"))?;

    let scenario = Scenario {
        contract,
        n: system.n as usize,
        merchant_client: mc.keys,
        merchant_tp: mt.keys,
        order_seed: rng::child_seed(seed, "pipeline/order"),
        adversary: cfg.adversary,
        client_agrees: true,
        channel_failure: 0.0,
        seed: rng::child_seed(seed, "pipeline/protocol"),
        client_balance: None,
    };
    let transcript = protocol::run_e2e(&scenario).map_err(|e| e.in_stage("protocol"))?;
    Ok(PipelineReport {
        mode: cfg.mode,
        seed,
        message_bits,
        budget: cfg.budget,
        channels: vec![mc.report, mt.report],
        system,
        outcome: transcript.outcome,
        transcript,
    })
}
