//! Acceptance checks for the command-line frontend: byte-level determinism of
//! every subcommand's artifacts, plus exit-code conventions.

use std::fs;
use std::path::Path;
use std::process::Command;

fn sol() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sol"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

/// Runs a subcommand into `out`, asserting success, and returns the sorted
/// list of (relative name, file bytes) for every artifact produced.
fn run_into(args: &[&str], config: &str, out: &Path) -> Vec<(String, Vec<u8>)> {
    let status = sol()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .unwrap();
    assert!(status.success(), "sol {args:?} failed");
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn assert_deterministic(label: &str, args: &[&str], config: &str) {
    let tmp = tempfile::tempdir().unwrap();
    let first = run_into(args, config, &tmp.path().join("a"));
    let second = run_into(args, config, &tmp.path().join("b"));
    assert!(!first.is_empty(), "{label}: no artifacts written");
    assert_eq!(
        first.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        second.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "{label}: artifact sets differ"
    );
    for ((name, bytes_a), (_, bytes_b)) in first.iter().zip(&second) {
        assert_eq!(bytes_a, bytes_b, "{label}: {name} differs between reruns");
    }
    println!(
        "PASS criterion 10 ({label}): {} artifacts byte-identical across reruns",
        first.len()
    );
}

#[test]
fn criterion_10_train_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "train.json",
        r#"{
            "version": 1,
            "data": {"kind": "synthetic_classification", "n": 120, "pos_rate": 0.3, "separation": 2.5},
            "layer_widths": [2, 4, 1],
            "train": {"max_epochs": 15, "patience": 5, "validation_fraction": 0.2,
                      "seed": 7, "learning_rate": 0.001, "batch_size": null},
            "loss": {"kind": "sol", "score": "tss", "dist": {"kind": "uniform"}}
        }"#,
    );
    assert_deterministic("train", &["train"], &config);
}

#[test]
fn criterion_10_experiment_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "experiment.json",
        r#"{
            "version": 1,
            "data": {"kind": "synthetic_classification", "n": 150, "pos_rate": 0.3, "separation": 3.0},
            "network": {"layer_widths": [2, 4, 1]},
            "train": {"max_epochs": 10, "patience": 4, "validation_fraction": 0.2,
                      "seed": 11, "learning_rate": 0.001, "batch_size": null},
            "losses": [
                {"kind": "cross_entropy"},
                {"kind": "sol", "score": "f1", "dist": {"kind": "raised_cosine", "mu": 0.5, "delta": 0.3}}
            ],
            "repeats": 3,
            "resample": {"kind": "subsample", "fraction": 0.8},
            "report_score": "f1"
        }"#,
    );
    assert_deterministic("experiment", &["experiment"], &config);
}

#[test]
fn criterion_10_verify_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "verify.json",
        r#"{"version": 1, "seed": 42, "mc_draws": 2000}"#,
    );
    assert_deterministic("verify", &["verify"], &config);
}

#[test]
fn criterion_10_prepare_and_sweep_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw.csv");
    fs::write(
        &raw,
        "site,pm10,wind,label\nA,10.5,3.2,0\nB,44.0,1.1,1\nA,-200,2.0,0\nB,12.0,0.5,0\nA,80.2,4.4,1\n",
    )
    .unwrap();
    let prepare = write_config(
        tmp.path(),
        "prepare.json",
        &format!(
            r#"{{
                "version": 1,
                "input": "{}",
                "label_column": "label",
                "plan": {{"missing_sentinel": "-200", "drop_columns": [],
                          "indicators": [], "one_hot": true, "standardize": true,
                          "standardize_fit_rows": null}}
            }}"#,
            raw.display()
        ),
    );
    assert_deterministic("prepare", &["prepare"], &prepare);

    let preds = tmp.path().join("preds.csv");
    fs::write(
        &preds,
        "prediction,label\n0.1,0\n0.4,0\n0.35,1\n0.8,1\n0.9,1\n0.6,0\n",
    )
    .unwrap();
    let sweep = write_config(
        tmp.path(),
        "sweep.json",
        &format!(
            r#"{{"version": 1, "input": "{}", "score": "csi"}}"#,
            preds.display()
        ),
    );
    assert_deterministic("sweep", &["sweep"], &sweep);
}

#[test]
fn invalid_config_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "bad.json",
        r#"{
            "version": 1,
            "data": {"kind": "synthetic_classification", "n": 50, "pos_rate": 0.3, "separation": 2.0},
            "layer_widths": [2, 4, 1],
            "train": {"max_epochs": 5, "patience": 10, "validation_fraction": 0.2,
                      "seed": 1, "learning_rate": 0.001, "batch_size": null},
            "loss": {"kind": "cross_entropy"}
        }"#,
    );
    let out = tmp.path().join("out");
    let status = sol()
        .args(["train", "--config", &config, "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists(), "no artifacts may be written on config errors");
}

#[test]
fn missing_data_file_exits_with_code_3() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "sweep.json",
        r#"{"version": 1, "input": "/nonexistent/preds.csv", "score": "f1"}"#,
    );
    let status = sol()
        .args(["sweep", "--config", &config, "--out"])
        .arg(tmp.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn seed_flag_overrides_config_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(
        tmp.path(),
        "verify.json",
        r#"{"version": 1, "seed": 1, "mc_draws": 1000}"#,
    );
    let base = run_into(&["verify"], &config, &tmp.path().join("a"));
    let status = sol()
        .args(["verify", "--config", &config, "--seed", "2", "--out"])
        .arg(tmp.path().join("c"))
        .status()
        .unwrap();
    assert!(status.success());
    let report = fs::read(tmp.path().join("c/report.json")).unwrap();
    let base_report = &base.iter().find(|(n, _)| n == "report.json").unwrap().1;
    assert_ne!(&report, base_report, "--seed must change the sampled report");
}
