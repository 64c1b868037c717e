//! End-to-end behavior of the command-line binary.

mod common;

use std::process::Command;

use common::{binary, separable_pairs, write_tsv};

fn run(args: &[&str]) -> std::process::Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &std::process::Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn train_then_eval_reproduces_best_dev_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_tsv(dir.path(), "train.tsv", &separable_pairs(24, 1));
    let dev = write_tsv(dir.path(), "dev.tsv", &separable_pairs(10, 2));
    let ckpt = dir.path().join("ckpt");
    let report = dir.path().join("train.json");

    let out = run(&[
        "train",
        "--train",
        train.to_str().unwrap(),
        "--dev",
        dev.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--report",
        report.to_str().unwrap(),
        "--hidden",
        "10",
        "--dm",
        "3",
        "--epochs",
        "4",
        "--batch-size",
        "8",
        "--seed",
        "11",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let train_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let best_dev = train_report["best_dev_accuracy"].as_f64().unwrap();

    let eval_report = dir.path().join("eval.json");
    let out = run(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--test",
        dev.to_str().unwrap(),
        "--report",
        eval_report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let eval_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&eval_report).unwrap()).unwrap();
    assert_eq!(
        eval_report["test_accuracy"].as_f64().unwrap(),
        best_dev,
        "checkpoint evaluation must reproduce the reported best dev accuracy"
    );
}

#[test]
fn predict_emits_one_line_per_input_with_probabilities() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_tsv(dir.path(), "train.tsv", &separable_pairs(16, 3));
    let dev = write_tsv(dir.path(), "dev.tsv", &separable_pairs(8, 4));
    let ckpt = dir.path().join("ckpt");
    let out = run(&[
        "train",
        "--train",
        train.to_str().unwrap(),
        "--dev",
        dev.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--hidden",
        "8",
        "--dm",
        "2",
        "--epochs",
        "2",
        "--batch-size",
        "8",
    ]);
    assert!(out.status.success());

    let input = dir.path().join("input.tsv");
    std::fs::write(
        &input,
        "alpha0 alpha1 alpha2\talpha0 alpha1\nalpha3 alpha4\tbeta0\nalpha5\tunseen tokens here\n",
    )
    .unwrap();
    let out = run(&[
        "predict",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let lines: Vec<String> = stdout(&out).lines().map(String::from).collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let (prob, label) = line.split_once('\t').unwrap();
        let prob: f64 = prob.parse().unwrap();
        assert!(prob > 0.0 && prob < 1.0);
        assert!(label == "entails" || label == "neutral");
    }
}

#[test]
fn gradcheck_command_passes_and_prints_error() {
    let out = run(&["gradcheck", "--seed", "7", "--configs", "20"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("max relative error"), "{text}");
}

#[test]
fn exit_codes_distinguish_usage_and_runtime_failures() {
    // missing required --train flag: usage error
    let out = run(&["train", "--dev", "/tmp/nope.tsv"]);
    assert_eq!(out.status.code(), Some(2));

    // unreadable checkpoint: runtime error
    let out = run(&["eval", "--checkpoint", "/nonexistent", "--test", "/nonexistent.tsv"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn strict_mode_rejects_malformed_lines_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    std::fs::write(&bad, "a b\tc d\tentails\nmissing fields\n").unwrap();
    let dev = write_tsv(dir.path(), "dev.tsv", &separable_pairs(4, 5));
    let out = run(&[
        "train",
        "--train",
        bad.to_str().unwrap(),
        "--dev",
        dev.to_str().unwrap(),
        "--strict",
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--dm",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(":2"), "error should name line 2: {err}");
}

#[test]
fn majority_baseline_runs_from_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let train = write_tsv(dir.path(), "train.tsv", &separable_pairs(20, 6));
    let test = write_tsv(dir.path(), "test.tsv", &separable_pairs(10, 7));
    let out = run(&[
        "baseline",
        "majority",
        "--train",
        train.to_str().unwrap(),
        "--test",
        test.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("test accuracy 0.5000"));
}
