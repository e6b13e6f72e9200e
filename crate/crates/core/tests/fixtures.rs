use std::path::Path;

use qecom_core::charize::{self, PatternTable, PhaseShiftTable};
use qecom_core::kgp::{self, CountTable};
use sha2::{Digest, Sha256};

fn dir() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

#[test]
fn manifest_matches_fixture_bytes() {
    let manifest = std::fs::read_to_string(dir().join("MANIFEST.sha256")).unwrap();
    let mut listed = Vec::new();
    for line in manifest.lines().filter(|l| !l.trim().is_empty()) {
        let (hash, name) = line.split_once("  ").expect("sha256sum format");
        let got = Sha256::digest(std::fs::read(dir().join(name)).unwrap());
        let got: String = got.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(got, hash, "{name}");
        listed.push(name.to_string());
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(dir())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "MANIFEST.sha256")
        .collect();
    on_disk.sort();
    listed.sort();
    assert_eq!(listed, on_disk);
}

#[test]
fn count_tables_replay() {
    let my = [139, 38, 19, 195];
    for (name, m_y) in [
        "detection_15db.json",
        "detection_20db.json",
        "detection_25db.json",
        "detection_20db_spools.json",
    ]
    .into_iter()
    .zip(my)
    {
        let t = CountTable::load(&dir().join(name)).unwrap();
        let s = kgp::replay(&t, 100.0).unwrap();
        assert_eq!(s.m_y, m_y, "{name}");
        assert_eq!(s.pulses, Some(10_000_000_000));
        assert!(s.n_x + s.n_y <= s.n);
    }
}

#[test]
fn characterization_files_parse() {
    for pair in [
        "merchant_tp1",
        "merchant_client1",
        "merchant_tp2",
        "merchant_client2",
    ] {
        let open = |p: String| std::fs::File::open(dir().join(p)).unwrap();
        let phase =
            PhaseShiftTable::from_csv_reader(open(format!("phase_shift_{pair}.csv"))).unwrap();
        assert_eq!(phase.counts.len(), 4);
        PatternTable::from_csv_reader(open(format!("pattern_{pair}.csv"))).unwrap();
        let xi = charize::power_fluctuation(
            &charize::read_power_series(open(format!("power_{pair}.csv"))).unwrap(),
        )
        .unwrap();
        assert!(xi > 0.005 && xi < 0.008, "{pair}: {xi}");
        charize::read_polarization(open(format!("polarization_{pair}.csv"))).unwrap();
    }
}
