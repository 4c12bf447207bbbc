mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use common::*;

fn changeqa(args: &[&str], cwd: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_changeqa"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "changeqa {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_then_stats_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_suite(&planted_suite(4, 5).pairs, d);
    fs::write(d.join("config.toml"), suite_config().to_toml()).unwrap();

    let out = changeqa(&["--config", "config.toml", "--out", "o1", "run", "--pairs", "pairs.jsonl"], d);
    assert!(String::from_utf8_lossy(&out.stdout).contains("forwarded to judge"));
    changeqa(&["--config", "config.toml", "--out", "o2", "--jobs", "3", "run", "--pairs", "pairs.jsonl"], d);
    for f in ["dataset.jsonl", "candidates.jsonl", "stats.json"] {
        assert_eq!(fs::read(d.join("o1").join(f)).unwrap(), fs::read(d.join("o2").join(f)).unwrap(), "{f}");
    }
    let stats = json(d.join("o1/stats.json"));
    assert_eq!(stats["stats"]["pairs_total"], 4);
    assert_eq!(stats["failures"].as_array().unwrap().len(), 0);

    changeqa(&["--out", "o1", "stats"], d);
    let report = json(d.join("o1/dataset_stats.json"));
    assert_eq!(json(d.join("o1/stats.json"))["stats"]["pairs_total"], 4);
    let rows = fs::read_to_string(d.join("o1/dataset.jsonl")).unwrap().lines().count();
    assert_eq!(report["rows"], rows);
    assert!(fs::read_to_string(d.join("o1/dataset_stats.csv")).unwrap().starts_with("x,y\n"));

    changeqa(&["--config", "config.toml", "--out", "o1", "random-crop-audit", "--pairs", "pairs.jsonl", "--n-crops", "50"], d);
    let audit = json(d.join("o1/random_crop_audit.json"));
    assert_eq!(audit["n_crops"], 50);
}

#[test]
fn seed_does_not_change_candidate_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_suite(&planted_suite(3, 5).pairs, d);
    fs::write(d.join("config.toml"), suite_config().to_toml()).unwrap();
    changeqa(&["--config", "config.toml", "--out", "a", "--seed", "1", "run", "--pairs", "pairs.jsonl"], d);
    changeqa(&["--config", "config.toml", "--out", "b", "--seed", "2", "run", "--pairs", "pairs.jsonl"], d);
    let ca = fs::read_to_string(d.join("a/candidates.jsonl")).unwrap();
    let cb = fs::read_to_string(d.join("b/candidates.jsonl")).unwrap();
    assert_eq!(ca, cb, "candidate decisions do not depend on the seed");
}

#[test]
fn lab_subcommands_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("scores.csv"), "sample_id,score,label\na,0.05,pos\nb,0.10,pos\nc,0.40,neg\nd,0.90,neg\ne,0.15,neg\n").unwrap();
    let out = changeqa(&["--out", "r", "calibrate-iou", "--scores", "scores.csv"], d);
    assert!(String::from_utf8_lossy(&out.stdout).contains("AUC"));
    let roc = json(d.join("r/calibrate_iou.json"));
    assert_eq!(roc["auc"], 1.0);
    assert_eq!(roc["best_threshold"], 0.1);

    let mut topk = String::new();
    for (q, rank) in [("q1", 1), ("q2", 3), ("q3", 2)] {
        for r in 1..=3 {
            topk.push_str(&format!("{{\"query_id\":\"{q}\",\"rank\":{r},\"agree\":{}}}\n", r == rank));
        }
    }
    fs::write(d.join("topk.jsonl"), topk).unwrap();
    changeqa(&["--out", "r", "eval-topk", "--annotations", "topk.jsonl", "--k-max", "3"], d);
    let curve: Vec<f64> = serde_json::from_value(json(d.join("r/eval_topk.json"))).unwrap();
    assert_eq!(curve, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);

    let mut metrics = String::new();
    for m in ["cosine", "l1"] {
        for q in 0..4 {
            metrics.push_str(&format!("{{\"query_id\":\"q{q}\",\"metric\":\"{m}\",\"approved\":{}}}\n", m == "cosine" || q > 0));
        }
    }
    fs::write(d.join("metrics.jsonl"), metrics).unwrap();
    changeqa(&["--out", "r", "eval-metrics", "--annotations", "metrics.jsonl"], d);
    let rows = json(d.join("r/eval_metrics.json"));
    assert_eq!(rows[0]["metric"], "cosine");
    assert_eq!(rows[0]["rate"], 1.0);
    assert_eq!(rows[1]["rate"], 0.75);

    changeqa(&["--out", "r", "simulate-bon", "--p", "0.5", "--n", "1,3", "--trials", "2000"], d);
    let cells = json(d.join("r/simulate_bon.json"));
    assert_eq!(cells[1]["analytic"], 0.875);

    changeqa(&["--out", "r", "simulate-convergence", "--n", "50,200", "--trials", "5"], d);
    assert_eq!(json(d.join("r/simulate_convergence.json")).as_array().unwrap().len(), 2);
    assert!(d.join("r/simulate_convergence.csv").exists());
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_changeqa"))
        .args(["run", "--pairs", "nope.jsonl"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}
