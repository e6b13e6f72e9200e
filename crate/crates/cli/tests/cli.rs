use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn qecom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qecom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?} stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn fx(name: &str) -> String {
    fixture(name).to_string_lossy().into_owned()
}

#[test]
fn gen_irreducible_worked_example() {
    let out = qecom(&["gf2", "gen-irreducible", "--n", "8", "--seed", "0111 1100"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["irreducible"]["bits"], "101111011");
    assert_eq!(v["base"]["bits"], "111000011");
}

#[test]
fn sign_then_verify() {
    let keys = ["--x2", "01111100", "--x3", "10000001", "--x4", "10100110"];
    let msg = ["--message", "1011001110001111"];
    let signed = qecom(&[&["sign"][..], &keys, &msg].concat());
    assert!(signed.status.success());
    let tag = json(&signed)["tag"]["bits"].as_str().unwrap().to_string();
    assert_eq!(tag.len(), 8);

    let ok = qecom(&[&["verify"][..], &keys, &msg, &["--tag", &tag]].concat());
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["valid"], true);

    let mut flipped: Vec<char> = tag.chars().collect();
    flipped[0] = if flipped[0] == '0' { '1' } else { '0' };
    let flipped: String = flipped.into_iter().collect();
    let bad = qecom(&[&["verify"][..], &keys, &msg, &["--tag", &flipped]].concat());
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(json(&bad)["valid"], false);
}

#[test]
fn sign_contract_file() {
    let keys = [
        "--x2",
        "0111110001",
        "--x3",
        "1000000101",
        "--x4",
        "1010011011",
    ];
    let out = qecom(&[&["sign"][..], &keys, &["--contract", &fx("contract.json")]].concat());
    assert!(out.status.success());
    assert!(json(&out)["message_bits"].as_u64().unwrap() > 100);
}

#[test]
fn message_and_contract_are_exclusive() {
    let keys = ["--x2", "01", "--x3", "10", "--x4", "11"];
    let out = qecom(
        &[
            &["sign"][..],
            &keys,
            &["--message", "1", "--contract", "x.json"],
        ]
        .concat(),
    );
    assert!(!out.status.success());
}

#[test]
fn synthetic_cascade() {
    let out = qecom(&[
        "cascade", "--bits", "200000", "--rate", "0.002", "--seed", "3",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["keys_equal"], true);
    let f = v["efficiency"].as_f64().unwrap();
    assert!((1.0..1.3).contains(&f), "{f}");
}

#[test]
fn kgp_replay_and_simulate() {
    let out = qecom(&[
        "kgp",
        "replay",
        "--table",
        &fx("detection_20db.json"),
        "--e-b-x",
        "0.001",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["summary"]["m_y"], 38);
    assert_eq!(v["rates"]["e_b_x"], 0.001);

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("kgp.json");
    std::fs::write(
        &cfg,
        r#"{"pulses": 2000000, "p_x": 0.8, "intensity": 0.02, "loss_db": [5.0, 5.0], "seed": 1}"#,
    )
    .unwrap();
    let a = qecom(&["kgp", "simulate", "--config", cfg.to_str().unwrap()]);
    let b = qecom(&["kgp", "simulate", "--config", cfg.to_str().unwrap()]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(json(&a)["summary"]["n"].as_u64().unwrap() > 0);
}

#[test]
fn security_plan_from_table() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("plan.json");
    let table = fx("detection_20db.json");
    std::fs::write(
        &input,
        format!(
            r#"{{"detection": {table:?}, "leak_ec": 59209, "phase_error": {{"kind": "bound", "e_p_bar": 0.28}},
                "message_bits": 428072, "duration_s": 100}}"#
        ),
    )
    .unwrap();
    let out = qecom(&["security", "plan", "--input", input.to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v = json(&out);
    assert_eq!(v["n_star"], 1257);
    assert!((v["sr_per_second"].as_f64().unwrap() - 11.734).abs() < 0.01);
}

#[test]
fn charize_kinds() {
    let pat = json(&qecom(&[
        "charize",
        "--kind",
        "pattern",
        "--input",
        &fx("pattern_merchant_client1.csv"),
    ]));
    assert_eq!(
        format!("{:.2e}", pat["sin_psi"].as_f64().unwrap()),
        "5.89e-3"
    );
    let pol = json(&qecom(&[
        "charize",
        "--kind",
        "polarization",
        "--input",
        &fx("polarization_merchant_client1.csv"),
    ]));
    assert!((pol["tan_theta"].as_f64().unwrap() - 1e-3).abs() < 1e-15);
    let ph = json(&qecom(&[
        "charize",
        "--kind",
        "phase",
        "--input",
        &fx("phase_shift_merchant_tp1.csv"),
    ]));
    assert_eq!(ph["bounds"].as_array().unwrap().len(), 3);
    let pw = json(&qecom(&[
        "charize",
        "--kind",
        "power",
        "--input",
        &fx("power_merchant_tp1.csv"),
    ]));
    assert!((pw["xi"].as_f64().unwrap() - 0.0076).abs() < 5e-5);
}

#[test]
fn run_e2e_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let contract = std::fs::read_to_string(fixture("contract.json")).unwrap();
    for (adv, code) in [("none", 0), ("forge_client", 2), ("repudiate_merchant", 0)] {
        let p = dir.path().join(format!("{adv}.json"));
        std::fs::write(
            &p,
            format!(r#"{{"contract": {contract}, "n": 32, "seed": 4, "adversary": "{adv}"}}"#),
        )
        .unwrap();
        let out = qecom(&["run-e2e", "--scenario", p.to_str().unwrap()]);
        assert_eq!(
            out.status.code(),
            Some(code),
            "{adv}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let t = json(&out);
        assert_eq!(t["adversary"], adv);
    }
}

#[test]
fn attack_rates() {
    let out = qecom(&[
        "attack",
        "--kind",
        "forge-client",
        "--trials",
        "200",
        "--seed",
        "1",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["successes"], 0);
    assert_eq!(v["trials"], 200);
    let rep = json(&qecom(&[
        "attack",
        "--kind",
        "repudiate",
        "--trials",
        "100",
    ]));
    assert_eq!(rep["verdict_agreement"], 100);
    let t = json(&qecom(&[
        "attack",
        "--kind",
        "tamper",
        "--trials",
        "20000",
        "--n",
        "8",
        "--message-bits",
        "64",
    ]));
    assert!(t["rate"].as_f64().unwrap() <= t["band"].as_f64().unwrap());
}

#[test]
fn pipeline_writes_report_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = qecom(&[
        "pipeline",
        "--config",
        &fx("pipeline_simulate.json"),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["outcome"], "completed");
    assert_eq!(v["channels"].as_array().unwrap().len(), 2);
}

#[test]
fn stage_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("pipeline_simulate.json")).unwrap())
            .unwrap();
    cfg["merchant_tp"]["kgp"]["intensity"] = 0.0.into();
    cfg["contract"] = fx("contract.json").into();
    let p = dir.path().join("zero.json");
    std::fs::write(&p, cfg.to_string()).unwrap();
    let out = qecom(&["pipeline", "--config", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["in_stage"], "security");
    assert!(err["error"].as_str().unwrap().contains("infeasible"));
}

#[test]
fn missing_input_is_an_error() {
    let out = qecom(&["kgp", "replay", "--table", "/nonexistent/table.json"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonexistent"));
}
