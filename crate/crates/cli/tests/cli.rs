use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn writerid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_writerid"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = writerid(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn error_json(args: &[&str]) -> Value {
    let out = writerid(args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has a line");
    serde_json::from_str(last).expect("error is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn count_prints_exact_integers() {
    let v = ok_json(&["count", "--profile", "2,3,4"]);
    assert_eq!(v["variants"], "511");
    assert_eq!(v["segments"], 9);
    assert_eq!(v["constrained"], "256");
    let v = ok_json(&["count", "--profile", "3,3,3,3,3,3,3,3"]);
    assert_eq!(v["variants"], "16777215");
    assert_eq!(v["constrained"], "9740686");
}

#[test]
fn end_to_end_on_synthetic_ink() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.json");
    let test = dir.path().join("test.json");
    let v = ok_json(&[
        "synth",
        "--writers",
        "3",
        "--pages",
        "1",
        "--chars",
        "6",
        "--seed",
        "2",
        "--out",
        s(&train),
        "--test-out",
        s(&test),
    ]);
    assert_eq!(v["train_pages"], 3);
    assert_eq!(v["test_pages"], 3);

    let chars = dir.path().join("chars.json");
    let v = ok_json(&["preprocess", "--in", s(&train), "--out", s(&chars)]);
    let n = v["characters"].as_u64().unwrap();
    assert!(n >= 3);

    let aug = dir.path().join("aug.json");
    let v = ok_json(&[
        "augment",
        "--in",
        s(&chars),
        "--out",
        s(&aug),
        "--per-char",
        "2",
        "--affine",
        "on",
    ]);
    assert_eq!(v["variants"].as_u64().unwrap(), 2 * n);

    let maps = dir.path().join("maps");
    let v = ok_json(&[
        "sigmaps",
        "--in",
        s(&chars),
        "--level",
        "2",
        "--out",
        s(&maps),
        "--png",
    ]);
    assert_eq!(v["channels"], 7);
    assert!(maps.join("char_00000.sig").exists());
    assert!(maps.join("char_00000_ch06.png").exists());

    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"batch_size": 6, "epochs": 1, "iterations_per_epoch": 2}"#,
    )
    .unwrap();
    let model = dir.path().join("model.bin");
    let v = ok_json(&[
        "train",
        "--config",
        s(&config),
        "--data",
        s(&train),
        "--out",
        s(&model),
    ]);
    assert_eq!(v["writers"], 3);
    assert!(v["network"]
        .as_str()
        .unwrap()
        .starts_with("7×96×96 Input-16C3"));

    let report = dir.path().join("report.json");
    let v = ok_json(&[
        "eval",
        "--model",
        s(&model),
        "--data",
        s(&test),
        "--drop-tests",
        "4",
        "--report",
        s(&report),
    ]);
    assert_eq!(v["pages"], 3);
    assert_eq!(v["top10"], 1.0);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(saved["top1"], v["top1"]);
    assert_eq!(saved["pages"].as_array().unwrap().len(), 3);

    // a writer the model never saw
    let stranger = dir.path().join("stranger.json");
    ok_json(&[
        "synth",
        "--writers",
        "5",
        "--pages",
        "1",
        "--chars",
        "2",
        "--out",
        s(&stranger),
    ]);
    let e = error_json(&["eval", "--model", s(&model), "--data", s(&stranger)]);
    assert!(e["error"]["message"].as_str().unwrap().contains("w03"));
}

#[test]
fn failures_are_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let e = error_json(&[
        "preprocess",
        "--in",
        s(&missing),
        "--out",
        s(&dir.path().join("x.json")),
    ]);
    assert!(e["error"]["kind"].is_string());
    assert!(e["error"]["message"]
        .as_str()
        .unwrap()
        .contains("nope.json"));

    let e = error_json(&["count", "--profile", "0"]);
    assert!(e["error"]["message"].is_string());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let e = error_json(&[
        "train",
        "--config",
        s(&bad),
        "--data",
        s(&bad),
        "--out",
        s(&dir.path().join("m.bin")),
    ]);
    assert_eq!(e["error"]["kind"], "config");
}
