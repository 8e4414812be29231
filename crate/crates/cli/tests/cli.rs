use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fmim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fmim"))
        .args(args)
        .output()
        .expect("run fmim")
}

fn ok(args: &[&str]) -> String {
    let out = fmim(args);
    assert!(
        out.status.success(),
        "fmim {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpora written to `dir/data`.
fn small_data(dir: &Path) -> PathBuf {
    let cfg = dir.join("synth.txt");
    fs::write(
        &cfg,
        "n_source_train = 60\nn_target_unlabeled = 60\nn_target_test = 30\n",
    )
    .unwrap();
    let data = dir.join("data");
    ok(&["synth", "--config", s(&cfg), "--out-dir", s(&data)]);
    data
}

fn train_args<'a>(data: &'a Path, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = [
        "train",
        "--preset",
        "synthetic",
        "--epochs",
        "2",
        "--source-train",
        s(&data.join("source_train.conll")),
        "--target-unlabeled",
        s(&data.join("target_unlabeled.conll")),
        "--target-test",
        s(&data.join("target_test.conll")),
        "--output-dir",
        s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> String {
    let args = train_args(data, out, extra);
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn records(run: &Path) -> Vec<Value> {
    fs::read_to_string(run.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn synth_writes_three_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = small_data(dir.path());
    let b = dir.path().join("again");
    ok(&["synth", "--config", s(&dir.path().join("synth.txt")), "--out-dir", s(&b)]);
    for (name, n) in [
        ("source_train.conll", 60),
        ("target_unlabeled.conll", 60),
        ("target_test.conll", 30),
    ] {
        let text = fs::read_to_string(a.join(name)).unwrap();
        assert_eq!(text.split("\n\n").filter(|x| !x.trim().is_empty()).count(), n);
        assert_eq!(text, fs::read_to_string(b.join(name)).unwrap());
    }
}

#[test]
fn synth_rejects_overlapping_lexicons() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.txt");
    fs::write(&cfg, "source_lexicon_prefix = x\ntarget_lexicon_prefix = x\n").unwrap();
    let out = fmim(&["synth", "--config", s(&cfg), "--out-dir", s(&dir.path().join("o"))]);
    assert!(!out.status.success());
}

#[test]
fn train_is_deterministic_and_logs_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let report_a = train(&data, &a, &["--seed", "3"]);
    let report_b = train(&data, &b, &["--seed", "3"]);
    assert_eq!(report_a, report_b);
    for f in ["metrics.jsonl", "checkpoint.json", "report.jsonl"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let recs = records(&a);
    assert_eq!(recs.len(), 2 * 60usize.div_ceil(16));
    for r in &recs {
        let d1 = r["delta1"].as_f64().unwrap();
        assert!((0.0..=4f64.ln() + 1e-9).contains(&d1));
        let below = r["branch"] == "BelowThreshold";
        assert_eq!(below, d1 < 0.5);
    }
    let reports: Vec<Value> = report_a.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 2);
    assert!(reports[1]["micro_f1"].as_f64() >= reports[0]["micro_f1"].as_f64());
}

#[test]
fn zero_alpha_trains_on_cross_entropy_only() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &["--alpha", "0"]);
    for r in records(&run) {
        assert!(r["mi_loss"].as_f64().is_some());
        assert_eq!(r["total"], r["ce"]);
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let cfg = dir.path().join("run.txt");
    fs::write(&cfg, "alpha = 0.5\nrho = 0.9\nepochs = 1\n").unwrap();
    let run = dir.path().join("run");
    let mut args = train_args(&data, &run, &["--config", s(&cfg), "--rho", "0.3"]);
    // --epochs from train_args must also win over the file
    args.push("--set".into());
    args.push("batch_size=8".into());
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let resolved = fs::read_to_string(run.join("config.txt")).unwrap();
    for line in ["alpha = 0.5", "rho = 0.3", "epochs = 2", "batch_size = 8"] {
        assert!(resolved.lines().any(|l| l == line), "missing {line:?} in\n{resolved}");
    }
}

#[test]
fn evaluate_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &[]);
    let ck = run.join("checkpoint.json");
    let test = data.join("target_test.conll");

    let absa: Value = serde_json::from_str(&ok(&["evaluate", "--checkpoint", s(&ck), "--test", s(&test)])).unwrap();
    let ate: Value = serde_json::from_str(&ok(&[
        "evaluate", "--checkpoint", s(&ck), "--test", s(&test), "--mode", "ATE",
    ]))
    .unwrap();
    assert_eq!(absa["mode"], "ABSA");
    assert!(ate["micro_f1"].as_f64() >= absa["micro_f1"].as_f64());

    // only checkpoints are accepted as models
    assert!(!fmim(&["evaluate", "--checkpoint", s(&test), "--test", s(&test)]).status.success());
    // NER scoring needs a BIO model
    assert!(!fmim(&["evaluate", "--checkpoint", s(&ck), "--test", s(&test), "--mode", "NER"]).status.success());

    let table = ok(&["diagnose", "--checkpoint", s(&ck), "--input", s(&test)]);
    assert_eq!(table, ok(&["diagnose", "--checkpoint", s(&ck), "--input", s(&test)]));
    assert!(table.starts_with("   #      H(Y)"));
    let lines = ok(&["diagnose", "--json", "--checkpoint", s(&ck), "--input", s(&data.join("target_unlabeled.conll"))]);
    let rows: Vec<Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 60);
    for r in rows {
        let (h, hc, mi) = (
            r["h_y"].as_f64().unwrap(),
            r["h_y_given_x"].as_f64().unwrap(),
            r["mi"].as_f64().unwrap(),
        );
        assert!(mi >= -1e-9);
        assert_eq!(mi, h - hc);
    }
}

#[test]
fn sweep_rows_match_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_data(dir.path());
    let csv_path = dir.path().join("sweep.csv");
    let mut args = train_args(&data, dir.path(), &[]);
    args[0] = "sweep".into();
    // sweep has no --output-dir
    args.truncate(args.len() - 2);
    args.extend(["--param", "alpha", "--values", "0,0.01,0.1", "--out", s(&csv_path)].map(String::from));
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let csv = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,absa_f1,ate_f1");
    assert_eq!(lines.len(), 4);

    let base = dir.path().join("base");
    let report = train(&data, &base, &["--alpha", "0"]);
    let absa: Value = serde_json::from_str(report.lines().next().unwrap()).unwrap();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[1].parse::<f64>().unwrap(), absa["micro_f1"].as_f64().unwrap());
}

#[test]
fn missing_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = fmim(&["train", "--output-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("source_train"));
    let out = fmim(&["train", "--epochs", "0", "--output-dir", s(dir.path())]);
    assert!(!out.status.success());
}
