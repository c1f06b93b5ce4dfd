mod common;

use std::fs;

use common::*;
use sparta::cache::{read_feature_cache, CacheItem};
use sparta::corpus::read_split_manifest;
use sparta::model::NetworkConfig;

#[test]
fn extract_three_wavs_to_mfcc() {
    let dir = tempfile::tempdir().unwrap();
    wav_fixture(dir.path(), 3);
    let o = sparta(dir.path(), &["extract", "--manifest", "wavs.jsonl", "--features", "mfcc", "--out", "mfcc.bin"]);
    ok(&o);
    let cache = read_feature_cache(dir.path().join("mfcc.bin")).unwrap();
    assert_eq!(cache.len(), 3);
    for item in cache.values() {
        let CacheItem::Features(m) = item else { panic!("expected frames") };
        assert_eq!(m.cols(), 14);
        assert!(m.rows() > 0);
    }
    let first = fs::read(dir.path().join("mfcc.bin")).unwrap();
    ok(&sparta(dir.path(), &["extract", "--manifest", "wavs.jsonl", "--features", "mfcc", "--out", "mfcc.bin"]));
    assert_eq!(first, fs::read(dir.path().join("mfcc.bin")).unwrap());
}

#[test]
fn extract_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    ok(&sparta(dir.path(), &["extract", "--manifest", "empty.jsonl", "--features", "mel", "--out", "mel.bin"]));
    assert!(read_feature_cache(dir.path().join("mel.bin")).unwrap().is_empty());
}

#[test]
fn extract_reports_unreadable_file() {
    let dir = tempfile::tempdir().unwrap();
    wav_fixture(dir.path(), 3);
    fs::write(dir.path().join("u1.wav"), b"not audio").unwrap();
    let o = sparta(dir.path(), &["extract", "--manifest", "wavs.jsonl", "--features", "mfcc", "--out", "mfcc.bin"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("u1.wav"), "{}", stderr(&o));
}

#[test]
fn split_is_deterministic_and_checks_feasibility() {
    let dir = tempfile::tempdir().unwrap();
    vector_fixture(dir.path(), &small_spec());
    let args = ["split", "--manifest", "manifest.jsonl", "--seed", "5", "--out", "split.tsv"];
    let o = sparta(dir.path(), &args);
    ok(&o);
    assert!(stdout(&o).contains("speaker overlap\tfalse"));
    let first = fs::read(dir.path().join("split.tsv")).unwrap();
    ok(&sparta(dir.path(), &args));
    assert_eq!(first, fs::read(dir.path().join("split.tsv")).unwrap());
    assert_eq!(read_split_manifest(dir.path().join("split.tsv")).unwrap().ratios, [0.8, 0.1, 0.1]);

    wav_fixture(dir.path(), 2);
    let o = sparta(dir.path(), &["split", "--manifest", "wavs.jsonl", "--out", "two.tsv"]);
    assert_eq!(o.status.code(), Some(1));
    let o = sparta(dir.path(), &["split", "--manifest", "manifest.jsonl", "--ratios", "0.5,0.5,0.5", "--out", "bad.tsv"]);
    assert_eq!(o.status.code(), Some(2));
}

fn trained_fixture(epochs: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    vector_fixture(dir.path(), &spec);
    write_json(&dir.path().join("run.json"), &run_config(&spec, epochs));
    ok(&sparta(dir.path(), &["split", "--manifest", "manifest.jsonl", "--out", "split.tsv"]));
    dir
}

#[test]
fn stl_and_mtl_produce_one_and_three_heads() {
    let dir = trained_fixture(12);
    let o = sparta(dir.path(), &["train", "--config", "run.json", "--mode", "mtl", "--out", "mtl"]);
    ok(&o);
    assert_eq!(stdout(&o).lines().count(), 3);
    let mtl = NetworkConfig::from_json(&fs::read_to_string(dir.path().join("mtl/model.json")).unwrap()).unwrap();
    assert_eq!(mtl.active_tasks.len(), 3);
    assert!(dir.path().join("mtl/checkpoint.bin").exists() && dir.path().join("mtl/history.json").exists());

    ok(&sparta(dir.path(), &["train", "--config", "run.json", "--mode", "stl", "--tasks", "g,d", "--out", "stl"]));
    for task in ["gender", "dialect"] {
        let net = NetworkConfig::from_json(&fs::read_to_string(dir.path().join(format!("stl/{task}/model.json"))).unwrap()).unwrap();
        assert_eq!(net.active_tasks.len(), 1);
        assert_eq!(net.heads.len(), 1);
    }
    assert!(!dir.path().join("stl/emotion").exists());

    let o = sparta(dir.path(), &["eval", "--config", "run.json", "--checkpoint", "mtl"]);
    ok(&o);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("mtl/report.json")).unwrap()).unwrap();
    for agg in report["aggregates"].as_array().unwrap() {
        assert_eq!(agg["mode"], "MTL");
        assert!(agg["macro_f1"].as_f64().unwrap() >= 0.95, "{agg}");
    }
    let o = sparta(dir.path(), &["eval", "--config", "run.json", "--checkpoint", "stl", "--out", "stl-report"]);
    ok(&o);
    let tsv = fs::read_to_string(dir.path().join("stl-report/report.tsv")).unwrap();
    assert!(tsv.lines().any(|l| l.starts_with("ALL\tgender\tSTL")));
    assert!(!tsv.contains("emotion"));
}

#[test]
fn grid_of_four_points() {
    let dir = trained_fixture(2);
    fs::write(dir.path().join("space.json"), r#"{"hidden": [16, 32], "layers": [1, 2]}"#).unwrap();
    let o = sparta(dir.path(), &["grid", "--config", "run.json", "--space", "space.json", "--out", "g"]);
    ok(&o);
    let tsv = fs::read_to_string(dir.path().join("g/grid.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 5);
    assert!(tsv.starts_with("rank\tindex\thidden\tlayers\tf1_gender\tf1_emotion\tf1_dialect\tscore\tbest_epoch\n"));

    fs::write(dir.path().join("big.json"), r#"{"hidden": [512]}"#).unwrap();
    let o = sparta(dir.path(), &["grid", "--config", "run.json", "--space", "big.json", "--out", "g2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.hidden"));
}

#[test]
fn config_errors_exit_2_with_field_path() {
    let dir = trained_fixture(2);
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    cfg["train"]["epochs"] = 0.into();
    write_json(&dir.path().join("bad.json"), &cfg);
    let o = sparta(dir.path(), &["train", "--config", "bad.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epochs"), "{}", stderr(&o));

    let o = sparta(dir.path(), &["train", "--config", "run.json", "--features", "MFCC", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trunk"), "{}", stderr(&o));

    let o = sparta(dir.path(), &["train", "--manifest", "manifest.jsonl", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("feature"));
}

#[test]
fn data_errors_exit_1() {
    let dir = trained_fixture(2);
    fs::remove_file(dir.path().join("x.bin")).unwrap();
    let o = sparta(dir.path(), &["train", "--config", "run.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn divergence_exits_3() {
    let dir = trained_fixture(2);
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    cfg["train"]["optimizer"] = serde_json::json!({"type": "sgd", "lr": 1e300});
    write_json(&dir.path().join("hot.json"), &cfg);
    let o = sparta(dir.path(), &["train", "--config", "hot.json", "--out", "o"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = trained_fixture(3);
    let args = ["train", "--config", "run.json", "--seed", "9", "--out", "r"];
    ok(&sparta(dir.path(), &args));
    ok(&sparta(dir.path(), &["eval", "--config", "run.json", "--checkpoint", "r"]));
    let first = snapshot(&dir.path().join("r"));
    fs::remove_dir_all(dir.path().join("r")).unwrap();
    ok(&sparta(dir.path(), &args));
    ok(&sparta(dir.path(), &["eval", "--config", "run.json", "--checkpoint", "r"]));
    assert_eq!(first, snapshot(&dir.path().join("r")));
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["checkpoint.bin", "history.json", "model.json", "report.json", "report.tsv", "run.json"]);
}

#[test]
fn feature_only_config_takes_vector_widths_from_caches() {
    let dir = trained_fixture(2);
    let cfg = serde_json::json!({
        "manifest": "manifest.jsonl",
        "caches": {"i": "i.bin", "x": "x.bin"},
        "split": "split.tsv",
        "feature": "ix",
        "train": {"epochs": 2}
    });
    write_json(&dir.path().join("short.json"), &cfg);
    ok(&sparta(dir.path(), &["train", "--config", "short.json", "--tasks", "g", "--out", "o"]));
    let net = NetworkConfig::from_json(&fs::read_to_string(dir.path().join("o/model.json")).unwrap()).unwrap();
    let spec = small_spec();
    assert_eq!((net.vector_dims.i, net.vector_dims.x), (spec.dims[0], spec.dims[2]));
    assert_eq!(net.active_tasks, [sparta::Task::Gender]);
}
