use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ofdmsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ofdmsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = ofdmsim(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_subcommands() {
    let text = ok(&["--help"]);
    for cmd in ["dataset", "train", "eval", "sweep", "report"] {
        assert!(text.contains(cmd), "missing {cmd}");
    }
}

#[test]
fn dataset_train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model");
    let results = dir.path().join("eval");

    let text = ok(&["dataset", "--frames", "10", "--snr", "10,20", "--pilots", "16", "--seed", "3", "--out", s(&data)]);
    assert!(text.contains("8 training and 2 validation"));

    ok(&["train", "--dataset", s(&data), "--epochs", "2", "--out", s(&model)]);
    assert!(model.join("model.json").exists());
    assert!(data.join("dataset.json").exists());

    let text = ok(&[
        "eval", "--model", s(&model), "--pilots", "16", "--detectors", "LS,DDLSD", "--snr", "0,10", "--frames", "10",
        "--out", s(&results),
    ]);
    assert!(text.contains("DDLSD"));
    let csv = results.join("results.csv");
    let first = fs::read(&csv).unwrap();

    let report = ok(&["report", s(&csv), "--out", s(&dir.path().join("report.txt"))]);
    assert!(report.contains("LS") && report.contains("BER"));
    assert_eq!(fs::read_to_string(dir.path().join("report.txt")).unwrap(), report);

    ok(&[
        "eval", "--model", s(&model), "--pilots", "16", "--detectors", "LS,DDLSD", "--snr", "0,10", "--frames", "10",
        "--out", s(&results),
    ]);
    assert_eq!(fs::read(&csv).unwrap(), first);
}

#[test]
fn model_must_match_the_link() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("model");
    ok(&["train", "--frames", "10", "--epochs", "1", "--out", s(&model)]);
    let out = ofdmsim(&[
        "eval", "--model", s(&model.join("model.json")), "--pilots", "16", "--frames", "5", "--snr", "10", "--out", s(dir.path()),
    ]);
    assert!(!out.status.success());
}

#[test]
fn sweep_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("spec.json");
    fs::write(
        &config,
        r#"{"name": "cfg", "detectors": ["LS", "MMSE"], "snr_grid_db": [0, 20], "frames_per_point": 10,
            "config": {"pilot_count": 8, "cp_len": 0}}"#,
    )
    .unwrap();
    let out = dir.path().join("sweep");
    let text = ok(&["sweep", "--config", s(&config), "--modulation", "16qam", "--out", s(&out)]);
    assert!(text.contains("MMSE"));
    for f in ["results.csv", "manifest.json", "plot_results.py"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("16qam"));
}

#[test]
fn bad_arguments_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!ofdmsim(&["eval", "--modulation", "8psk", "--out", s(dir.path())]).status.success());
    assert!(!ofdmsim(&["sweep", "no_such_suite", "--out", s(dir.path())]).status.success());
    let data = dir.path().join("d");
    ok(&["dataset", "--frames", "5", "--out", s(&data)]);
    let out = ofdmsim(&["train", "--dataset", s(&data), "--pilots", "8", "--out", s(&dir.path().join("m"))]);
    assert!(!out.status.success());
}
