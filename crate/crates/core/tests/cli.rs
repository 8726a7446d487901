//! The command-line pipeline, end to end on a tiny corpus.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use oracleforge::dataset::io::read_jsonl;
use oracleforge::dataset::PairRecord;

const TINY_TRAIN: &str = "max_epochs = 2\nbatch_size = 8\n[model]\nembed_dim = 8\nheads = 2\nlayers = 1\nff_dim = 16\nout_dim = 8\nhidden = [8]\n";

fn cli(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oracleforge"))
        .args(args)
        .current_dir(dir)
        .env_remove("ORACLEFORGE_SEED")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cli(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["train", "--help"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["--bogus"]).status.code(), Some(2));
    assert_eq!(cli(dir.path(), &["corpus"]).status.code(), Some(2));
    let missing = cli(dir.path(), &["mj", "check", "nowhere.mj"]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere.mj"));
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str, seed: Option<&str>, env: Option<&str>| {
        let mut args = vec!["corpus", "--out", out, "--families", "1", "--methods", "3", "--tests", "2"];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_oracleforge"));
        cmd.args(&args).current_dir(d).env_remove("ORACLEFORGE_SEED");
        if let Some(e) = env {
            cmd.env("ORACLEFORGE_SEED", e);
        }
        assert!(cmd.output().unwrap().status.success());
        fs::read_to_string(d.join(out).join("atlas/tests.json")).unwrap()
    };
    let flag = run("a", Some("3"), None);
    let env = run("b", None, Some("3"));
    let other = run("c", None, Some("4"));
    assert_eq!(flag, env);
    assert_ne!(flag, other);
}

#[test]
fn mj_check_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("p.mj"),
        "num example_correct(num x) { num y = abs(x) * (x + 2.0) * (x - 2.0); return y; }\nint twice(int a) { return a * 2; }\n",
    )
    .unwrap();
    let check = ok(d, &["mj", "check", "p.mj"]);
    assert!(check.contains("example_correct: 2 statements"));
    let run = ok(d, &["mj", "run", "p.mj", "--call", "example_correct(0.5)", "--call", "twice(4)"]);
    assert_eq!(run.lines().collect::<Vec<_>>(), ["-1.875", "8"]);
}

#[test]
fn pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("tiny.toml"), TINY_TRAIN).unwrap();
    ok(d, &["corpus", "--out", "c", "--families", "2", "--methods", "3", "--tests", "3", "--seed", "1"]);
    ok(d, &["mutate", "--corpus", "c", "--out", "m", "--per-method", "3", "--seed", "1"]);
    ok(d, &["label", "--corpus", "c", "--mutants", "m/mutants.jsonl", "--out", "l"]);
    ok(d, &["dataset", "build", "--corpus", "c", "--mutants", "m/mutants.jsonl", "--out", "data", "--seed", "1"]);
    for f in ["pairs.jsonl", "triplets.jsonl", "split.json"] {
        assert!(d.join("data").join(f).is_file(), "{f}");
    }
    let labeled: Vec<PairRecord> = read_jsonl(&d.join("l/pairs.jsonl")).unwrap();
    let built: Vec<PairRecord> = read_jsonl(&d.join("data/pairs.jsonl")).unwrap();
    assert_eq!(labeled, built);

    ok(d, &["train", "--dataset", "data", "--config", "tiny.toml", "--out", "t", "--seed", "1"]);
    assert!(d.join("t/model.ckpt").is_file() && d.join("t/train_report.json").is_file());

    let metrics: serde_json::Value = serde_json::from_str(&ok(d, &["eval", "--ckpt", "t/model.ckpt", "--dataset", "data", "--out", "e"])).unwrap();
    let total = ["tp", "fp", "tn", "fn"].iter().map(|k| metrics[k].as_u64().unwrap()).sum::<u64>();
    assert!(total > 0);
    for f in ["report.json", "verdicts.csv", "metrics_per_family.csv"] {
        assert!(d.join("e").join(f).is_file(), "{f}");
    }

    let first = &built[0];
    let verdict: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["predict", "--ckpt", "t/model.ckpt", "--corpus", "c", "--family", &first.family, "--test-id", &first.test_id],
    ))
    .unwrap();
    let p = verdict["pass_probability"].as_f64().unwrap() + verdict["fail_probability"].as_f64().unwrap();
    assert!((p - 1.0).abs() < 1e-12);

    let report: serde_json::Value = serde_json::from_str(&ok(
        d,
        &["explain", "--ckpt", "t/model.ckpt", "--pairs", "data/pairs.jsonl", "--pair-id", &first.id, "--k", "20", "--out", "x"],
    ))
    .unwrap();
    assert_eq!(report["k"].as_f64(), Some(20.0));
    assert!(d.join("x/heatmap.csv").is_file() && d.join("x/heatmap.svg").is_file());

    ok(d, &["embed-viz", "--ckpt", "t/model.ckpt", "--pairs", "data/pairs.jsonl", "--out", "v"]);
    assert!(d.join("v/lda.svg").is_file());

    ok(d, &["localize", "--ckpt", "t/model.ckpt", "--pairs", "data/pairs.jsonl", "--k-grid", "5,50", "--out", "loc.csv"]);
    let csv = fs::read_to_string(d.join("loc.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);

    let bad = cli(d, &["explain", "--ckpt", "t/model.ckpt", "--pairs", "data/pairs.jsonl", "--pair-id", "nope", "--out", "y"]);
    assert_eq!(bad.status.code(), Some(1));
}
