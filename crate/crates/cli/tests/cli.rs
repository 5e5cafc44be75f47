use std::path::Path;
use std::process::{Command, Output};

use dcbpl::pipeline::RunConfig;
use serde_json::Value;

fn dcbpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcbpl")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn write_small_config(path: &Path) {
    let mut cfg = RunConfig::default();
    cfg.n_patients = 300;
    cfg.train.epochs = 2;
    std::fs::write(path, cfg.to_json()).unwrap();
}

#[test]
fn full_run_then_query() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    write_small_config(&cfg);
    let out = tmp.path().join("run");
    let run = json(&dcbpl(&["dcbpl", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]));
    assert_eq!(run["stage"], "dcbpl");
    assert_eq!(run["config_hash"].as_str().unwrap().len(), 64);

    let q = json(&dcbpl(&["query", "--out", out.to_str().unwrap(), "--stratum", "0,0", "--prefix", "0;1,2", "--k", "3"]));
    assert_eq!(q["actions"].as_array().unwrap().len(), 3);
    assert!(q["provider"].is_u64());

    let est = json(&dcbpl(&["estimate", "--out", out.to_str().unwrap(), "--estimator", "tmle", "--crossfit", "5"]));
    let per = est["estimates"]["per_provider"].as_array().unwrap();
    assert!(!per.is_empty());
    assert!(per.iter().all(|e| e["value"].is_f64() && e["se"].is_f64() && e["estimator"] == "tmle"));
    assert_eq!(est["estimates"]["crossfit_folds"], 5);

    let bad = dcbpl(&["query", "--out", out.to_str().unwrap(), "--stratum", "99,0"]);
    assert!(!bad.status.success());
    let err: Value = serde_json::from_slice(&bad.stderr).unwrap();
    assert_eq!(err["error"], "unknown_stratum");
}

#[test]
fn stages_chain_through_the_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("small.json");
    write_small_config(&cfg);
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();
    json(&dcbpl(&["simulate", "--config", cfg.to_str().unwrap(), "--out", o]));
    let early = dcbpl(&["pretrain", "--out", o]);
    assert!(!early.status.success());
    json(&dcbpl(&["prepare", "--out", o]));
    json(&dcbpl(&["pretrain", "--out", o]));
    json(&dcbpl(&["finetune", "--provider", "1", "--out", o]));
    assert!(out.join("models/provider_1").is_dir());
}

#[test]
fn missing_config_fails_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let res = dcbpl(&["dcbpl", "--config", tmp.path().join("nope.json").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(!res.status.success());
    let err: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(!out.exists());
}

#[test]
fn unknown_flags_are_usage_errors() {
    let res = dcbpl(&["estimate", "--bogus"]);
    assert_eq!(res.status.code(), Some(2));
}
