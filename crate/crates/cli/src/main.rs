//! `qecom`: command-line front end.
//!
//! Every subcommand prints JSON on stdout. Exit codes: 0 on success, 1 on
//! error, 2 when a run completes but the contract is aborted or a signature
//! does not verify.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use qecom_core::bits::BitString;
use qecom_core::cascade::{self, CascadeConfig};
use qecom_core::charize::{self, PatternTable, PhaseShiftTable};
use qecom_core::gf2::{base_polynomial, gen_irreducible, Gf2Poly};
use qecom_core::kgp::{self, CountTable, KgpConfig};
use qecom_core::pipeline::{run_pipeline, PipelineConfig};
use qecom_core::protocol::{self, Adversary, Contract, Outcome, Scenario, Tamper};
use qecom_core::security::{self, EntropyInputs, PhaseErrorSource, SecurityBudget};
use qecom_core::{rng, SignatureKeys, SignatureTag};

#[derive(Parser)]
#[command(name = "qecom", version, about = "Quantum e-commerce signing toolkit")]
struct Cli {
    /// Write the JSON result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// GF(2) polynomial utilities.
    #[command(subcommand)]
    Gf2(Gf2Command),
    /// Sign a message or contract with a one-time key.
    Sign(SignArgs),
    /// Verify a tag against a message or contract.
    Verify(VerifyArgs),
    /// Reconcile two keys (or a synthetic pair) with Cascade.
    Cascade(CascadeArgs),
    /// Key generation: simulate the click model or replay a count table.
    #[command(subcommand)]
    Kgp(KgpCommand),
    /// Finite-key planning.
    #[command(subcommand)]
    Security(SecurityCommand),
    /// Source-flaw characterization from a measurement file.
    Charize(CharizeArgs),
    /// Run one signing round from a scenario file.
    RunE2e {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Monte-Carlo attack success rates.
    Attack(AttackArgs),
    /// Full run from a pipeline config.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum Gf2Command {
    /// Irreducible polynomial of degree n from an n-bit seed.
    GenIrreducible {
        #[arg(long)]
        n: usize,
        /// Seed bits, e.g. `0111 1100`.
        #[arg(long)]
        seed: String,
    },
}

#[derive(Args)]
struct KeyArgs {
    /// Polynomial seed bits.
    #[arg(long)]
    x2: String,
    /// LFSR initial state bits.
    #[arg(long)]
    x3: String,
    /// One-time pad bits.
    #[arg(long)]
    x4: String,
}

impl KeyArgs {
    fn keys(&self) -> Result<SignatureKeys> {
        Ok(SignatureKeys::new(
            BitString::parse_binary(&self.x2)?,
            BitString::parse_binary(&self.x3)?,
            BitString::parse_binary(&self.x4)?,
        )?)
    }
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct MessageArgs {
    /// Message bits.
    #[arg(long)]
    message: Option<String>,
    /// Contract JSON file; its canonical encoding is hashed.
    #[arg(long)]
    contract: Option<PathBuf>,
}

impl MessageArgs {
    fn bits(&self) -> Result<BitString> {
        match (&self.message, &self.contract) {
            (Some(m), _) => Ok(BitString::parse_binary(m)?),
            (None, Some(p)) => Ok(read_json::<Contract>(p)?.to_bits()),
            (None, None) => bail!("give --message or --contract"),
        }
    }
}

#[derive(Args)]
struct SignArgs {
    #[command(flatten)]
    keys: KeyArgs,
    #[command(flatten)]
    message: MessageArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    keys: KeyArgs,
    #[command(flatten)]
    message: MessageArgs,
    /// Tag bits.
    #[arg(long)]
    tag: String,
}

#[derive(Args)]
struct CascadeArgs {
    /// Reference key as a BitString JSON file.
    #[arg(long, requires = "key_b")]
    key_a: Option<PathBuf>,
    /// Noisy key as a BitString JSON file.
    #[arg(long)]
    key_b: Option<PathBuf>,
    /// Length of a synthetic key pair.
    #[arg(long, default_value_t = 1_000_000, conflicts_with = "key_a")]
    bits: usize,
    /// Flip rate of a synthetic key pair.
    #[arg(long, default_value_t = 0.002)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cascade parameters as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum KgpCommand {
    /// Simulate the click model from a KGP config
    Simulate {
        /// Click-model config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a measured detection count table
    Replay {
        /// Count table, JSON or CSV.
        #[arg(long)]
        table: PathBuf,
        #[arg(long, default_value_t = 100.0)]
        duration_s: f64,
        /// X-basis error rate to report alongside the table.
        #[arg(long)]
        e_b_x: Option<f64>,
    },
}

#[derive(Subcommand)]
enum SecurityCommand {
    /// Optimal key length and signature rate for one channel.
    Plan {
        #[arg(long)]
        input: PathBuf,
    },
}

/// Input of `security plan`.
#[derive(Deserialize)]
struct PlanInput {
    /// Count table path, relative to the input file.
    #[serde(default)]
    detection: Option<PathBuf>,
    #[serde(default)]
    n_x: Option<u64>,
    #[serde(default)]
    n_y: Option<u64>,
    #[serde(default)]
    m_y: Option<u64>,
    leak_ec: f64,
    phase_error: PhaseErrorSource,
    message_bits: u64,
    #[serde(default = "default_duration")]
    duration_s: f64,
    #[serde(default)]
    budget: SecurityBudget,
}

fn default_duration() -> f64 {
    100.0
}

#[derive(Clone, Copy, ValueEnum)]
enum CharizeKind {
    Power,
    Phase,
    Polarization,
    Pattern,
}

#[derive(Args)]
struct CharizeArgs {
    #[arg(long, value_enum)]
    kind: CharizeKind,
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0.844)]
    eta_d1: f64,
    #[arg(long, default_value_t = 0.855)]
    eta_d2: f64,
    #[arg(long, default_value_t = 1e-10)]
    eps: f64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AttackKind {
    ForgeClient,
    ForgeTp,
    Repudiate,
    /// Tag forgery on random messages, outside the protocol.
    Tamper,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, value_enum)]
    kind: AttackKind,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    #[arg(long, default_value_t = 16)]
    n: usize,
    /// Message length for `tamper`.
    #[arg(long, default_value_t = 64)]
    message_bits: usize,
    /// Contract for the protocol attacks; a built-in one otherwise.
    #[arg(long)]
    contract: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A scenario file either carries explicit keys or asks for random ones.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScenarioFile {
    Explicit(Scenario),
    Random(RandomScenario),
}

#[derive(Deserialize)]
struct RandomScenario {
    contract: Contract,
    n: usize,
    seed: u64,
    #[serde(default)]
    adversary: Adversary,
    #[serde(default = "yes")]
    client_agrees: bool,
    #[serde(default)]
    channel_failure: f64,
    #[serde(default)]
    client_balance: Option<i64>,
}

fn yes() -> bool {
    true
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn poly_json(p: &Gf2Poly) -> serde_json::Value {
    json!({
        "bits": p.to_desc_bits().to_binary_string(),
        "hex": p.to_hex(),
        "exponents": p.exponents(),
    })
}

fn tag_json(t: &SignatureTag) -> serde_json::Value {
    json!({ "bits": t.bits.to_binary_string(), "hex": t.bits.to_hex() })
}

fn built_in_contract() -> Contract {
    Contract {
        merchant_id: "merchant".into(),
        client_id: "client".into(),
        timestamp: 1_700_000_000,
        price: 100,
        payload: "attack trial".into(),
    }
}

/// Result value and exit code of one command.
fn run(command: Command) -> Result<(serde_json::Value, u8)> {
    Ok(match command {
        Command::Gf2(Gf2Command::GenIrreducible { n, seed }) => {
            let seed = BitString::parse_binary(&seed)?;
            let h = gen_irreducible(n, &seed)?;
            (
                json!({ "n": n, "base": poly_json(&base_polynomial(n)?), "irreducible": poly_json(&h) }),
                0,
            )
        }
        Command::Sign(a) => {
            let msg = a.message.bits()?;
            let tag = qecom_core::sign(&msg, &mut a.keys.keys()?)?;
            (
                json!({ "message_bits": msg.len(), "tag": tag_json(&tag) }),
                0,
            )
        }
        Command::Verify(a) => {
            let msg = a.message.bits()?;
            let tag = SignatureTag {
                bits: BitString::parse_binary(&a.tag)?,
            };
            let ok = qecom_core::verify(&msg, &tag, &mut a.keys.keys()?)?;
            (json!({ "valid": ok }), if ok { 0 } else { 2 })
        }
        Command::Cascade(a) => {
            let mut cfg: CascadeConfig = match &a.config {
                Some(p) => read_json(p)?,
                None => CascadeConfig::default(),
            };
            let (key_a, key_b) = match (&a.key_a, &a.key_b) {
                (Some(pa), Some(pb)) => (read_json::<BitString>(pa)?, read_json::<BitString>(pb)?),
                _ => {
                    use rand::Rng;
                    if !(0.0..=0.5).contains(&a.rate) {
                        bail!("flip rate {} outside [0, 0.5]", a.rate);
                    }
                    let mut r = rng::stream(a.seed, "cli/cascade");
                    let ka = BitString::from_bools((0..a.bits).map(|_| r.gen::<bool>()));
                    let mut kb = ka.clone();
                    for i in 0..a.bits {
                        if r.gen_bool(a.rate) {
                            kb.flip(i);
                        }
                    }
                    cfg.permutation_seed = rng::child_seed(a.seed, "cli/cascade/perm");
                    (ka, kb)
                }
            };
            let errors = key_a.hamming_distance(&key_b);
            let res = cascade::reconcile(&key_a, &key_b, &cfg)?;
            let e = errors as f64 / key_a.len().max(1) as f64;
            let f = if errors > 0 {
                Some(res.efficiency(key_a.len(), e))
            } else {
                None
            };
            let ok = res.corrected_peer_key == key_a;
            (
                json!({
                    "bits": key_a.len(),
                    "errors": errors,
                    "leaked_bits": res.leaked_bits,
                    "checksum_bits": res.checksum_bits,
                    "passes_used": res.passes_used,
                    "corrections": res.corrections,
                    "residual_mismatch": res.residual_mismatch,
                    "keys_equal": ok,
                    "efficiency": f,
                }),
                if ok { 0 } else { 2 },
            )
        }
        Command::Kgp(KgpCommand::Simulate { config, seed }) => {
            let mut cfg: KgpConfig = read_json(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (summary, sifted) = kgp::simulate(&cfg)?;
            let rates = kgp::estimate(&summary, Some(&sifted), None)?;
            (
                json!({ "summary": summary, "rates": rates, "sifted_bits": sifted.merchant_bits.len() }),
                0,
            )
        }
        Command::Kgp(KgpCommand::Replay {
            table,
            duration_s,
            e_b_x,
        }) => {
            let table =
                CountTable::load(&table).with_context(|| format!("loading {}", table.display()))?;
            let summary = kgp::replay(&table, duration_s)?;
            let rates = match e_b_x {
                Some(e) => Some(kgp::estimate(&summary, None, Some(e))?),
                None => None,
            };
            (
                json!({ "summary": summary, "rates": rates, "gain": summary.gain() }),
                0,
            )
        }
        Command::Security(SecurityCommand::Plan { input }) => {
            let plan: PlanInput = read_json(&input)?;
            let base = input.parent().unwrap_or(Path::new("."));
            let inputs = match &plan.detection {
                Some(p) => {
                    let path = if p.is_absolute() {
                        p.clone()
                    } else {
                        base.join(p)
                    };
                    EntropyInputs::from_summary(
                        &kgp::replay(&CountTable::load(&path)?, plan.duration_s)?,
                        plan.leak_ec,
                    )
                }
                None => EntropyInputs {
                    n_x: plan.n_x.context("n_x or detection is required")?,
                    n_y: plan.n_y.context("n_y or detection is required")?,
                    m_y: plan.m_y.context("m_y or detection is required")?,
                    leak_ec: plan.leak_ec,
                },
            };
            let r = security::optimize_n(
                &inputs,
                plan.phase_error,
                &plan.budget,
                plan.message_bits,
                plan.duration_s,
            )?;
            (serde_json::to_value(r)?, 0)
        }
        Command::Charize(a) => {
            let f = open(&a.input)?;
            let v = match a.kind {
                CharizeKind::Power => {
                    let s = charize::read_power_series(f)?;
                    json!({ "samples": s.len(), "xi": charize::power_fluctuation(&s)? })
                }
                CharizeKind::Phase => {
                    let b =
                        PhaseShiftTable::from_csv_reader(f)?.bounds(a.eta_d1, a.eta_d2, a.eps)?;
                    let max = b.iter().map(|(_, d)| *d).fold(0.0, f64::max);
                    let rows: Vec<_> = b
                        .iter()
                        .map(|(p, d)| json!({ "phi": p.to_string(), "delta": d }))
                        .collect();
                    json!({ "bounds": rows, "delta": max })
                }
                CharizeKind::Polarization => serde_json::to_value(charize::read_polarization(f)?)?,
                CharizeKind::Pattern => serde_json::to_value(charize::pattern_deviation(
                    &PatternTable::from_csv_reader(f)?,
                )?)?,
            };
            (v, 0)
        }
        Command::RunE2e { scenario } => {
            let s = match read_json::<ScenarioFile>(&scenario)? {
                ScenarioFile::Explicit(s) => s,
                ScenarioFile::Random(r) => Scenario {
                    adversary: r.adversary,
                    client_agrees: r.client_agrees,
                    channel_failure: r.channel_failure,
                    client_balance: r.client_balance,
                    ..Scenario::with_random_keys(r.contract, r.n, 1, r.seed)
                },
            };
            let t = protocol::run_e2e(&s)?;
            let code = if t.outcome == Outcome::Completed {
                0
            } else {
                2
            };
            (serde_json::to_value(t)?, code)
        }
        Command::Attack(a) => {
            let contract = match &a.contract {
                Some(p) => read_json(p)?,
                None => built_in_contract(),
            };
            let adversary = match a.kind {
                AttackKind::ForgeClient => Adversary::ForgeClient,
                AttackKind::ForgeTp => Adversary::ForgeTp,
                AttackKind::Repudiate => Adversary::RepudiateMerchant,
                AttackKind::Tamper => {
                    let s = protocol::forgery_monte_carlo(
                        a.n,
                        a.message_bits,
                        a.trials,
                        Tamper::Random,
                        a.seed,
                    )?;
                    return Ok((serde_json::to_value(&s)?, 0));
                }
            };
            let s = protocol::attack_trials(&contract, adversary, a.n, a.trials, a.seed)?;
            (serde_json::to_value(s)?, 0)
        }
        Command::Pipeline { config } => {
            let (cfg, base) = PipelineConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let report = run_pipeline(&cfg, &base)?;
            let code = report.exit_code() as u8;
            (serde_json::to_value(report)?, code)
        }
    })
}

#[derive(Serialize)]
struct ErrorReport {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    in_stage: Option<&'static str>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok((value, code)) => {
            let text = serde_json::to_string_pretty(&value).expect("JSON values serialize");
            let written = match &cli.out {
                Some(p) => std::fs::write(p, text + "\n")
                    .with_context(|| format!("writing {}", p.display())),
                None => {
                    println!("{text}");
                    Ok(())
                }
            };
            if let Err(e) = written {
                eprintln!("error: {e:#}");
                return ExitCode::from(1);
            }
            ExitCode::from(code)
        }
        Err(e) => {
            let in_stage = e.downcast_ref::<qecom_core::Error>().and_then(|e| match e {
                qecom_core::Error::Stage { stage, .. } => Some(*stage),
                _ => None,
            });
            let report = ErrorReport {
                error: format!("{e:#}"),
                in_stage,
            };
            eprintln!(
                "{}",
                serde_json::to_string(&report).expect("error report serializes")
            );
            ExitCode::from(1)
        }
    }
}
