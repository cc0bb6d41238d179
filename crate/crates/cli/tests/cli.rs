use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use msi_core::data::read_dataset;
use msi_core::vsc::replay_merges;
use msi_core::Matrix;
use serde_json::Value;
use tempfile::TempDir;

fn msi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msi"))
        .args(args)
        .current_dir(dir)
        .env("MSI_LOG", "quiet")
        .output()
        .expect("binary runs")
}

fn lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("bad JSON line {l}: {e}")))
        .collect()
}

fn event<'a>(values: &'a [Value], name: &str) -> Vec<&'a Value> {
    values.iter().filter(|v| v["event"] == name).collect()
}

const SMALL: &str = r#"{
    "data": {"classes": 3, "samples_per_class": 6, "text_dim": 4, "audio_dim": 4, "frame_dim": 4, "frames": 8},
    "model": {"classes": 3, "text_dim": 4, "audio_dim": 4, "visual_dim": 4, "projection_dim": 3,
              "frames": 8, "epochs": 2, "batch_size": 4},
    "crossval": {"folds": 3}
}"#;

fn setup() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.json"), SMALL).unwrap();
    let out = msi(dir.path(), &["gen-data", "--config", "small.json", "--out", "d.msif"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn gen_data_is_deterministic_and_readable() {
    let dir = setup();
    let d = dir.path();
    let out = msi(d, &["gen-data", "--config", "small.json", "--out", "again.msif"]);
    assert!(out.status.success());
    assert_eq!(fs::read(d.join("d.msif")).unwrap(), fs::read(d.join("again.msif")).unwrap());
    let data = read_dataset(d.join("d.msif")).unwrap();
    assert_eq!(data.len(), 18);

    let v = lines(&out);
    assert_eq!(v[0]["event"], "config");
    assert_eq!(v[0]["config"]["model"]["alpha_ce"], 1.0);
    assert_eq!(v[0]["config"]["data"]["noise"], 0.5);
    let summary = event(&v, "gen_data")[0];
    assert_eq!(summary["records"], 18);
    assert_eq!(summary["seed"], 7);
    assert!(d.join("again.msif.config.json").exists());

    let other = msi(d, &["gen-data", "--config", "small.json", "--seed", "8", "--out", "s8.msif"]);
    assert!(other.status.success());
    assert_ne!(fs::read(d.join("d.msif")).unwrap(), fs::read(d.join("s8.msif")).unwrap());
}

#[test]
fn unknown_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"data": {"clases": 3}}"#).unwrap();
    let out = msi(dir.path(), &["gen-data", "--config", "bad.json", "--out", "x.msif"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clases"));
    assert!(!dir.path().join("x.msif").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(msi(dir.path(), &[]).status.code(), Some(1));
    assert_eq!(msi(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(msi(dir.path(), &["gen-data"]).status.code(), Some(1));
    assert_eq!(msi(dir.path(), &["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_msi"))
        .args(["gradcheck"])
        .env("MSI_LOG", "loud")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_resume_and_eval() {
    let dir = setup();
    let d = dir.path();
    let out = msi(d, &["train", "--config", "small.json", "--data", "d.msif", "--out", "a.ck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = lines(&out);
    let epochs = event(&v, "epoch");
    assert_eq!(epochs.len(), 2);
    for e in &epochs {
        let l = &e["loss"];
        let total = l["alpha_ce"].as_f64().unwrap() * l["l_ce"].as_f64().unwrap()
            + l["beta_cl"].as_f64().unwrap() * l["l_cl"].as_f64().unwrap();
        assert!((total - l["total"].as_f64().unwrap()).abs() < 1e-12);
    }
    let step = event(&v, "checkpoint")[0]["step"].as_u64().unwrap();
    assert!(step > 0);

    let out = msi(d, &["train", "--config", "small.json", "--data", "d.msif", "--resume", "a.ck", "--epochs", "1", "--out", "b.ck"]);
    assert!(out.status.success());
    let v = lines(&out);
    let first = event(&v, "epoch")[0]["step"].as_u64().unwrap();
    assert!(first > step);
    assert_eq!(event(&v, "checkpoint")[0]["epoch"], 3);

    let out = msi(d, &["eval", "--checkpoint", "b.ck", "--data", "d.msif", "--out", "r.json"]);
    assert!(out.status.success());
    let v = lines(&out);
    let r = event(&v, "eval")[0];
    let confusion: Vec<Vec<u64>> = serde_json::from_value(r["confusion"].clone()).unwrap();
    let rows: Vec<u64> = confusion.iter().map(|row| row.iter().sum()).collect();
    assert_eq!(rows, vec![6, 6, 6]);
    assert!(r["confusion_table"].as_str().unwrap().contains("t2"));
    let written: Value = serde_json::from_str(&fs::read_to_string(d.join("r.json")).unwrap()).unwrap();
    assert_eq!(&written, r);
}

#[test]
fn contrastive_with_batch_one_is_refused() {
    let dir = setup();
    let d = dir.path();
    let out = msi(d, &["train", "--config", "small.json", "--data", "d.msif", "--out", "a.ck"]);
    assert!(out.status.success());
    fs::write(
        d.join("b1.json"),
        SMALL.replace("\"batch_size\": 4", "\"batch_size\": 1"),
    )
    .unwrap();
    let out = msi(d, &["train", "--config", "b1.json", "--data", "d.msif", "--out", "c.ck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("batch_size"));
    assert!(!d.join("c.ck").exists());
}

#[test]
fn dimension_mismatch_is_a_config_error() {
    let dir = setup();
    let d = dir.path();
    let out = msi(d, &["train", "--data", "d.msif", "--out", "a.ck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data header"));
}

#[test]
fn eval_of_empty_or_broken_data() {
    let dir = setup();
    let d = dir.path();
    assert!(msi(d, &["train", "--config", "small.json", "--data", "d.msif", "--out", "a.ck"]).status.success());
    let data = read_dataset(d.join("d.msif")).unwrap();
    msi_core::data::write_dataset(&data.subset(&[]), d.join("empty.msif")).unwrap();
    let out = msi(d, &["eval", "--checkpoint", "a.ck", "--data", "empty.msif"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no samples"));

    let bytes = fs::read(d.join("d.msif")).unwrap();
    fs::write(d.join("cut.msif"), &bytes[..bytes.len() / 2]).unwrap();
    let out = msi(d, &["eval", "--checkpoint", "a.ck", "--data", "cut.msif"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    let ck = fs::read(d.join("a.ck")).unwrap();
    fs::write(d.join("cut.ck"), &ck[..ck.len() - 3]).unwrap();
    let out = msi(d, &["eval", "--checkpoint", "cut.ck", "--data", "d.msif"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn crossval_reports_folds_and_mean() {
    let dir = setup();
    let d = dir.path();
    let run = |seed: &str| {
        let out = msi(d, &["crossval", "--config", "small.json", "--data", "d.msif", "--seed", seed]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        lines(&out)
    };
    let a = run("1");
    let folds = event(&a, "fold");
    assert_eq!(folds.len(), 3);
    let mean = event(&a, "crossval")[0];
    let acc: f64 = folds.iter().map(|f| f["report"]["accuracy"].as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((mean["mean"]["accuracy"].as_f64().unwrap() - acc).abs() < 1e-12);

    let strip = |v: &[Value]| -> Vec<Value> {
        v.iter()
            .map(|x| {
                let mut x = x.clone();
                x.as_object_mut().unwrap().remove("elapsed_ms");
                x
            })
            .collect()
    };
    assert_eq!(strip(&run("1")), strip(&a));
    let b = run("2");
    let ca = event(&a, "crossval")[0];
    let cb = event(&b, "crossval")[0];
    assert_ne!(ca["assignment"], cb["assignment"]);
    let keys = |v: &Value| v.as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(ca), keys(cb));
    assert_eq!(keys(&ca["mean"]), keys(&cb["mean"]));
}

#[test]
fn compress_output_replays_exactly() {
    let dir = setup();
    let d = dir.path();
    let data = read_dataset(d.join("d.msif")).unwrap();
    for (id, alpha) in [("syn-00000", "0.5"), ("syn-00004", "0.3"), ("syn-00011", "1.0")] {
        let out = msi(d, &["compress", "--data", "d.msif", "--id", id, "--alpha", alpha, "--gamma", "0.6"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let v = lines(&out);
        let r = event(&v, "compress")[0];
        let relevant: Vec<usize> = serde_json::from_value(r["relevant_indices"].clone()).unwrap();
        let map: Vec<(usize, usize)> = serde_json::from_value(r["merge_map"].clone()).unwrap();
        let merged: Vec<Vec<f64>> = serde_json::from_value(r["merged"].clone()).unwrap();
        let raw = &data.find(id).unwrap().frames;
        let replay = replay_merges(raw, &relevant, &map, alpha.parse().unwrap()).unwrap();
        assert_eq!(replay, Matrix::from_rows(&merged).unwrap());
        assert_eq!(r["n"], 8);
        assert_eq!(r["l"], relevant.len());
    }
    let out = msi(d, &["compress", "--data", "d.msif", "--id", "syn-00000", "--gamma=-100"]);
    let v = lines(&out);
    assert_eq!(event(&v, "compress")[0]["ratio"], 1.0);

    let out = msi(d, &["compress", "--data", "d.msif", "--id", "missing"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing"));
}

#[test]
fn compress_with_checkpoint_guidance() {
    let dir = setup();
    let d = dir.path();
    assert!(msi(d, &["train", "--config", "small.json", "--data", "d.msif", "--out", "a.ck"]).status.success());
    let out = msi(d, &["compress", "--data", "d.msif", "--id", "syn-00002", "--checkpoint", "a.ck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(event(&lines(&out), "compress")[0]["guided"], true);
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let out = msi(dir.path(), &["gradcheck", "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = lines(&out);
    let blocks = event(&v, "gradcheck_block");
    for suite in ["contrastive", "tcn", "projection", "pipeline"] {
        assert!(blocks.iter().any(|b| b["suite"] == suite));
    }
    assert!(blocks.iter().all(|b| b["parameter_count"].as_u64().unwrap() > 0));
    assert_eq!(event(&v, "gradcheck")[0]["pass"], true);

    let out = msi(dir.path(), &["gradcheck", "--seed", "3", "--inject-fault", "anchor_head.weight"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("anchor_head.weight"));
}
