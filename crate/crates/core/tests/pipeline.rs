use std::path::{Path, PathBuf};

use qecom_core::pipeline::{run_pipeline, ChannelConfig, ContractSource, Mode, PipelineConfig};
use qecom_core::{Adversary, Error, Outcome};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

fn load(name: &str) -> (PipelineConfig, PathBuf) {
    PipelineConfig::load(&fixture(name)).unwrap()
}

fn stage(e: &Error) -> &'static str {
    match e {
        Error::Stage { stage, .. } => stage,
        other => panic!("untagged error {other}"),
    }
}

#[test]
fn replay_reaches_the_slower_channel_rate() {
    let (cfg, base) = load("pipeline_replay.json");
    let r = run_pipeline(&cfg, &base).unwrap();
    assert_eq!(r.outcome, Outcome::Completed);
    assert_eq!(r.exit_code(), 0);
    assert_eq!(r.channels[0].security.n_star, 1257);
    assert_eq!(r.channels[1].security.n_star, 775);
    assert_eq!(r.system.n, 1257);
    assert_eq!(r.system.limiting_channel, 0);
    assert!(
        (r.system.sr_per_second / 11.734 - 1.0).abs() < 1e-3,
        "{:?}",
        r.system
    );
    for c in &r.channels {
        assert!(!c.cascade.residual_mismatch);
        assert!(
            (1.0..1.3).contains(&c.cascade.efficiency),
            "{:?}",
            c.cascade
        );
    }
    assert!(r.transcript.money.is_conserved());
    r.transcript.audit().unwrap();
}

#[test]
fn characterized_replay_derives_flaws_from_measurements() {
    let (cfg, base) = load("pipeline_characterized.json");
    let r = run_pipeline(&cfg, &base).unwrap();
    let mc = r.channels[0].flaws.unwrap();
    assert!((mc.tan_theta - 1e-3).abs() < 1e-15);
    assert_eq!(format!("{:.2e}", mc.psi.sin()), "5.89e-3");
    assert!((mc.xi - 0.0072).abs() < 5e-5, "{}", mc.xi);
    for c in &r.channels {
        let d = c.coin_imbalance.unwrap();
        assert!(d > 0.0 && d < 0.1, "{d}");
        assert!(c.e_p_bar > 0.0 && c.e_p_bar < 0.5);
    }
    assert_eq!(r.outcome, Outcome::Completed);
}

#[test]
fn simulation_report_is_a_function_of_the_seed() {
    let (cfg, base) = load("pipeline_simulate.json");
    let a = run_pipeline(&cfg, &base).unwrap().to_json().unwrap();
    let b = run_pipeline(&cfg, &base).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let mut other = cfg.clone();
    other.seed = Some(6);
    assert_ne!(run_pipeline(&other, &base).unwrap().to_json().unwrap(), a);
    let v: serde_json::Value = serde_json::from_str(&a).unwrap();
    assert_eq!(v["outcome"], "completed");
    assert_eq!(v["channels"][0]["phase_error"]["kind"], "coin");
}

#[test]
fn forged_forward_aborts_with_exit_code_two() {
    let (mut cfg, base) = load("pipeline_simulate.json");
    cfg.adversary = Adversary::ForgeClient;
    let r = run_pipeline(&cfg, &base).unwrap();
    assert_eq!(r.outcome, Outcome::Aborted);
    assert_eq!(r.exit_code(), 2);
    assert!(r.transcript.money.is_conserved());
}

#[test]
fn simulate_needs_a_seed() {
    let (mut cfg, base) = load("pipeline_simulate.json");
    cfg.seed = None;
    assert_eq!(stage(&run_pipeline(&cfg, &base).unwrap_err()), "config");
}

#[test]
fn zero_intensity_is_infeasible() {
    let (mut cfg, base) = load("pipeline_simulate.json");
    cfg.merchant_tp.kgp.as_mut().unwrap().intensity = 0.0;
    let e = run_pipeline(&cfg, &base).unwrap_err();
    assert_eq!(stage(&e), "security");
    let Error::Stage { source, .. } = e else {
        unreachable!()
    };
    assert!(matches!(*source, Error::Infeasible(_)));
}

#[test]
fn message_shorter_than_contract_is_rejected() {
    let (mut cfg, base) = load("pipeline_simulate.json");
    cfg.message_bits = Some(8);
    assert_eq!(stage(&run_pipeline(&cfg, &base).unwrap_err()), "config");
}

#[test]
fn replay_without_table_is_a_config_error() {
    let (mut cfg, base) = load("pipeline_replay.json");
    cfg.merchant_client = ChannelConfig::default();
    assert_eq!(stage(&run_pipeline(&cfg, &base).unwrap_err()), "config");
    cfg.merchant_client.detection = Some("missing.json".into());
    assert_eq!(stage(&run_pipeline(&cfg, &base).unwrap_err()), "kgp");
}

#[test]
fn config_round_trips_through_json() {
    let (cfg, _) = load("pipeline_replay.json");
    assert_eq!(cfg.mode, Mode::Replay);
    assert!(matches!(cfg.contract, ContractSource::Path(_)));
    let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
}
