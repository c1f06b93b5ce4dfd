#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sparta::corpus::{manifest_to_string, write_wav, Waveform};
use sparta::ivector::{VectorPart, VectorStore};
use sparta::model::{FeatureInput, NetworkConfig, TrunkKind};
use sparta::synth::{multitask_dataset, synthetic_corpus, tone, MultiTaskSpec};
use sparta::ivector::VectorKind;
use sparta::{Corpus, Dataset, Gender, Task, UtteranceRecord};

pub fn sparta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparta"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[track_caller]
pub fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(o), stderr(o));
}

/// Writes `manifest.jsonl` and `i.bin`, `d.bin`, `x.bin` vector caches in `dir`.
pub fn vector_fixture(dir: &Path, spec: &MultiTaskSpec) {
    let utts = multitask_dataset(spec);
    fs::write(dir.join("manifest.jsonl"), manifest_to_string(&synthetic_corpus(&utts))).unwrap();
    for (slot, part) in VectorPart::ALL.into_iter().enumerate() {
        let mut store = VectorStore::new(part, spec.dims[slot]);
        for u in &utts {
            store.insert(u.id.clone(), u.parts[slot].iter().map(|v| *v as f32).collect()).unwrap();
        }
        store.save(dir.join(format!("{}.bin", part.as_char()))).unwrap();
    }
}

pub fn small_spec() -> MultiTaskSpec {
    MultiTaskSpec {
        speakers: 160,
        utterances_per_speaker: 4,
        ..Default::default()
    }
}

/// A run configuration for an idx FC network over the fixture caches.
pub fn run_config(spec: &MultiTaskSpec, epochs: usize) -> serde_json::Value {
    let mut net = NetworkConfig::default_for(FeatureInput::Vector(VectorKind::Idx), TrunkKind::Fc, &Task::ALL);
    net.vector_dims = spec.vector_dims();
    serde_json::json!({
        "manifest": "manifest.jsonl",
        "caches": {"i": "i.bin", "d": "d.bin", "x": "x.bin"},
        "split": "split.tsv",
        "network": net,
        "train": {"epochs": epochs, "batch_size": 32, "seed": 3},
        "seed": 1
    })
}

pub fn write_json(path: &Path, v: &serde_json::Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

/// `n` short tones with a manifest, one speaker each.
pub fn wav_fixture(dir: &Path, n: usize) -> PathBuf {
    let mut records = Vec::new();
    for i in 0..n {
        let name = format!("u{i}.wav");
        let wave = Waveform::new(tone(300.0 + 200.0 * i as f64, 0.3, 0.4), 16_000).unwrap();
        write_wav(dir.join(&name), &wave).unwrap();
        records.push(UtteranceRecord {
            id: format!("u{i}"),
            dataset: Dataset::SARA,
            speaker_id: format!("s{i}"),
            audio_path: PathBuf::from(name),
            gender: Some(Gender::F),
            dialect: None,
            emotion: None,
        });
    }
    let path = dir.join("wavs.jsonl");
    fs::write(&path, manifest_to_string(&Corpus::new(records).unwrap())).unwrap();
    path
}

/// Every regular file under `dir` with its bytes, sorted by relative path.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
