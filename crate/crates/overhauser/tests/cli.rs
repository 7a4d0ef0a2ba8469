use std::fs;
use std::path::Path;
use std::process::Command;

use overhauser::error::{EXIT_CALIBRATION, EXIT_CONFIG};
use overhauser::formats::{
    ensemble_from_bytes, ensemble_to_bytes, read_distribution, Format, Table,
};
use overhauser_core::experiment::ExperimentConfig;
use overhauser_core::sde::EnsembleResult;
use proptest::prelude::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_overhauser"))
}

fn run(dir: &Path, args: &[&str]) -> std::process::Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |v| v.is_finite())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tables_round_trip_bit_for_bit(cols in prop::collection::vec(prop::collection::vec(finite(), 5), 1..4)) {
        let dir = tempfile::tempdir().unwrap();
        let t = Table::new(cols.into_iter().enumerate().map(|(i, c)| (format!("c{i}"), c)));
        for format in [Format::Csv, Format::Json] {
            let path = dir.path().join(format!("t.{}", format.extension()));
            fs::write(&path, t.encode(format).unwrap()).unwrap();
            let back = Table::read(&path).unwrap();
            prop_assert_eq!(&back.columns, &t.columns);
            for (a, b) in back.values.iter().flatten().zip(t.values.iter().flatten()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn ensembles_round_trip(m in 1usize..20, nt in 1usize..4, seed in any::<u64>(), x in finite()) {
        let e = EnsembleResult {
            times: (0..nt).map(|k| k as f64 * 0.5).collect(),
            samples: (0..nt).map(|k| (0..m).map(|j| x + (k * m + j) as f64).collect()).collect(),
            seed,
            m,
        };
        let bytes = ensemble_to_bytes(&e);
        prop_assert_eq!(ensemble_from_bytes(&bytes).unwrap(), e);
        prop_assert!(ensemble_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}

#[test]
fn fid_pipeline_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["--out", "a", "steady-state"]).status.success());
    assert!(
        run(d, &["--out", "b", "invert-fid", "--input", "a/fid.csv"])
            .status
            .success()
    );
    assert!(run(d, &["--out", "c", "fit", "--input", "a/fid.csv"])
        .status
        .success());
    let grid = ExperimentConfig::default().grid;
    let original = read_distribution(&d.join("a/distribution.csv"), grid).unwrap();
    let inverted = read_distribution(&d.join("b/distribution.csv"), grid).unwrap();
    assert!(original.l1_distance(&inverted).unwrap() < 1e-3);
    let fit: serde_json::Value =
        serde_json::from_slice(&fs::read(d.join("c/fit.json")).unwrap()).unwrap();
    assert!(fit["t2_star"].as_f64().unwrap() > 30.0, "{fit}");
}

#[test]
fn replay_reproduces_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(
        d,
        &[
            "--out",
            "a",
            "--format",
            "json",
            "sweep",
            "prepare",
            "--values",
            "0,0.2,0.5,1"
        ]
    )
    .status
    .success());
    let ok = run(d, &["--out", "b", "replay", "a/manifest.json"]);
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    assert_eq!(
        fs::read(d.join("a/manifest.json")).unwrap(),
        fs::read(d.join("b/manifest.json")).unwrap()
    );
    let text = fs::read_to_string(d.join("a/manifest.json")).unwrap();
    let mut m: serde_json::Value = serde_json::from_str(&text).unwrap();
    m["config"]["seed"] = 99.into();
    fs::write(d.join("tampered.json"), serde_json::to_vec(&m).unwrap()).unwrap();
    let bad = run(d, &["--out", "c", "replay", "tampered.json"]);
    assert_eq!(bad.status.code(), Some(EXIT_CONFIG.into()));
}

#[test]
fn bad_config_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("typo.json"), r#"{"feedback": {"k_gian_mhz": 1.0}}"#).unwrap();
    let out = run(d, &["--config", "typo.json", "steady-state"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG.into()));
    fs::write(
        d.join("neg.json"),
        r#"{"feedback": {"sigma_th_mhz": -1.0}}"#,
    )
    .unwrap();
    let out = run(d, &["--config", "neg.json", "steady-state"]);
    assert_eq!(out.status.code(), Some(EXIT_CONFIG.into()));
}

#[test]
fn unreachable_calibration_is_exit_four_with_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("c.json"),
        r#"{"calibration": {"target_variance_reduction": 1e9}}"#,
    )
    .unwrap();
    let out = run(d, &["--config", "c.json", "--out", "o", "calibrate"]);
    assert_eq!(out.status.code(), Some(EXIT_CALIBRATION.into()));
    assert!(d.join("o/calibration.json").exists());
}
