use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sparta::cache::{read_feature_cache, write_feature_cache, CacheItem};
use sparta::corpus::{
    load_manifest, read_split_manifest, read_wav, split_speaker_disjoint, validate_split, write_split_manifest,
};
use sparta::dsp::{extract as extract_features, FeatureKind, FeatureMatrix};
use sparta::eval::{per_dataset_report, Average, Mode};
use sparta::gmm::fit_gmm;
use sparta::ivector::{
    baum_welch_stats, concat_vectors, extract_ivector_raw, length_normalize, load_external_vectors,
    train_total_variability, BwStats, VectorPart, VectorStore,
};
use sparta::model::{build_network, FeatureInput, Model, NetworkConfig};
use sparta::nn::{Matrix, ParamStore};
use sparta::train::{assemble_data, grid_search, DataSplit, GridSpace};
use sparta::{Corpus, SetName, Task};

use crate::config::{read_json, RunConfig, RunFlags, RunMode};
use crate::failure::{Classify, CmdResult, Failure};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).data()?;
    }
    fs::write(path, contents).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn frame_matrix(m: &FeatureMatrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| f64::from(m.row(r)[c]))
}

fn frame_cache(cfg: &RunConfig, kind: FeatureKind) -> CmdResult<BTreeMap<String, FeatureMatrix>> {
    let key = match kind {
        FeatureKind::Mel => "mel",
        FeatureKind::Mfcc => "mfcc",
    };
    let path = cfg
        .caches
        .get(key)
        .ok_or_else(|| Failure::config(format!("caches.{key}: required for {kind:?} input")))?;
    let mut out = BTreeMap::new();
    for (id, item) in read_feature_cache(path).data()? {
        match item {
            CacheItem::Features(m) if m.kind() == kind => {
                out.insert(id, m);
            }
            _ => return Err(Failure::data(format!("{}: entry {id:?} is not a {kind:?} matrix", path.display()))),
        }
    }
    Ok(out)
}

/// Network inputs for every corpus record, read from the caches `net` needs.
fn load_inputs(cfg: &RunConfig, net: &NetworkConfig, corpus: &Corpus) -> CmdResult<BTreeMap<String, Matrix>> {
    let mut inputs = BTreeMap::new();
    match net.feature {
        FeatureInput::Mel | FeatureInput::Mfcc => {
            let kind = if net.feature == FeatureInput::Mel { FeatureKind::Mel } else { FeatureKind::Mfcc };
            let cache = frame_cache(cfg, kind)?;
            for r in corpus.iter() {
                let m = cache
                    .get(&r.id)
                    .ok_or_else(|| Failure::data(format!("utterance {:?} missing from the {kind:?} cache", r.id)))?;
                inputs.insert(r.id.clone(), frame_matrix(m));
            }
        }
        FeatureInput::Vector(kind) => {
            let mut stores: BTreeMap<VectorPart, VectorStore> = BTreeMap::new();
            for part in kind.parts() {
                let key = part.as_char().to_string();
                let path = cfg
                    .caches
                    .get(&key)
                    .ok_or_else(|| Failure::config(format!("caches.{key}: required for {kind} input")))?;
                stores.insert(*part, load_external_vectors(path, *part, &net.vector_dims)?);
            }
            for r in corpus.iter() {
                let v = concat_vectors(kind.parts(), &stores, &r.id)?;
                inputs.insert(r.id.clone(), Matrix::from_fn(1, v.dim(), |_, c| f64::from(v.values[c])));
            }
        }
    }
    Ok(inputs)
}

fn load_data(cfg: &RunConfig, net: &NetworkConfig) -> CmdResult<DataSplit> {
    let corpus = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?).data()?;
    let split = read_split_manifest(RunConfig::require(&cfg.split, "split")?).data()?;
    let inputs = load_inputs(cfg, net, &corpus)?;
    Ok(assemble_data(&corpus, &split, &inputs)?)
}

pub fn extract(config: Option<&Path>, manifest: &Path, feature: FeatureInput, out: &Path) -> CmdResult {
    let kind = match feature {
        FeatureInput::Mel => FeatureKind::Mel,
        FeatureInput::Mfcc => FeatureKind::Mfcc,
        other => return Err(Failure::config(format!("--features {other}: extract computes mel or mfcc"))),
    };
    let dsp = match config {
        Some(path) => read_json::<RunConfig>(path)?.dsp,
        None => Default::default(),
    };
    dsp.validate().config()?;
    let corpus = load_manifest(manifest).data()?;
    let results: Vec<(String, Result<FeatureMatrix, String>)> = corpus
        .records()
        .par_iter()
        .map(|r| {
            let features = read_wav(&r.audio_path)
                .map_err(|e| e.to_string())
                .and_then(|w| extract_features(&w, &dsp, kind).map_err(|e| format!("{}: {e}", r.audio_path.display())));
            (r.id.clone(), features)
        })
        .collect();
    let mut items = BTreeMap::new();
    let mut failed = 0;
    for (id, res) in results {
        match res {
            Ok(m) => {
                items.insert(id, CacheItem::Features(m));
            }
            Err(e) => {
                eprintln!("failed: {id}: {e}");
                failed += 1;
            }
        }
    }
    if failed > 0 {
        return Err(Failure::data(format!("{failed} of {} utterances failed; no cache written", corpus.len())));
    }
    write_feature_cache(out, &items).data()?;
    println!("{} {kind:?} matrices -> {}", items.len(), out.display());
    Ok(())
}

pub fn split(manifest: &Path, ratios: &[f64], seed: u64, out: &Path) -> CmdResult {
    let ratios: [f64; 3] = ratios
        .try_into()
        .map_err(|_| Failure::config(format!("--ratios: expected 3 values, got {}", ratios.len())))?;
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Failure::config(format!("--ratios {ratios:?}: values in [0, 1] summing to 1")));
    }
    let corpus = load_manifest(manifest).data()?;
    let split = split_speaker_disjoint(&corpus, ratios, seed).data()?;
    let report = validate_split(&corpus, &split).data()?;
    write_split_manifest(out, &split).data()?;
    print!("{}", report.to_table());
    Ok(())
}

pub struct IvectorOptions {
    pub components: usize,
    pub rank: usize,
    pub ubm_iters: usize,
    pub tv_iters: usize,
    pub length_norm: bool,
}

/// Fits a UBM and total-variability matrix on the training set's MFCC frames,
/// then writes an i-vector for every utterance in the manifest.
pub fn ivector(flags: &RunFlags, opts: &IvectorOptions) -> CmdResult {
    let cfg = RunConfig::load(flags)?;
    let out = RunConfig::require(&cfg.out, "out")?;
    let corpus = load_manifest(RunConfig::require(&cfg.manifest, "manifest")?).data()?;
    let split = read_split_manifest(RunConfig::require(&cfg.split, "split")?).data()?;
    let cache = frame_cache(&cfg, FeatureKind::Mfcc)?;
    let frames = |id: &str| -> CmdResult<Vec<Vec<f64>>> {
        let m = cache
            .get(id)
            .ok_or_else(|| Failure::data(format!("utterance {id:?} missing from the MFCC cache")))?;
        Ok((0..m.rows()).map(|r| m.row(r).iter().map(|v| f64::from(*v)).collect()).collect())
    };
    let train_ids: Vec<&str> = corpus
        .iter()
        .map(|r| r.id.as_str())
        .filter(|id| split.set_of(id) == Some(SetName::Train))
        .collect();
    let mut pooled = Vec::new();
    for id in &train_ids {
        pooled.extend(frames(id)?);
    }
    let ubm = fit_gmm(&pooled, opts.components, opts.ubm_iters, cfg.seed).data()?;
    let stats = |id: &str| -> CmdResult<BwStats> { Ok(baum_welch_stats(&ubm, &frames(id)?)?) };
    let train_stats = train_ids.iter().map(|id| stats(id)).collect::<CmdResult<Vec<_>>>()?;
    let t = train_total_variability(&train_stats, &ubm, opts.rank, opts.tv_iters, cfg.seed)?;
    let mut store = VectorStore::new(VectorPart::I, opts.rank);
    for r in corpus.iter() {
        let mut w = extract_ivector_raw(&t, &ubm, &stats(&r.id)?)?;
        if opts.length_norm {
            w = length_normalize(&w);
        }
        store.insert(r.id.clone(), w.iter().map(|v| *v as f32).collect())?;
    }
    store.save(out)?;
    println!("{} i-vectors of dim {} -> {}", store.len(), opts.rank, out.display());
    Ok(())
}

fn output_dir(cfg: &RunConfig, task: Option<Task>) -> CmdResult<PathBuf> {
    let out = RunConfig::require(&cfg.out, "out")?;
    Ok(match task {
        Some(t) => out.join(t.as_str()),
        None => out.to_path_buf(),
    })
}

pub fn train(flags: &RunFlags) -> CmdResult {
    let mut cfg = RunConfig::load(flags)?;
    let models = cfg.models()?;
    output_dir(&cfg, None)?;
    let data = load_data(&cfg, &models[0].1)?;
    let mode = if cfg.mode == RunMode::Stl { Mode::Stl } else { Mode::Mtl };
    write(&output_dir(&cfg, None)?.join("run.json"), serde_json::to_string_pretty(&cfg).expect("config serializes"))?;
    for (task, net) in models {
        let dir = output_dir(&cfg, task)?;
        let model = build_network(&net, cfg.seed)?;
        let (best, history) = sparta::train::train(model, &data, &cfg.train)?;
        write(&dir.join("model.json"), net.to_json())?;
        best.params.save(dir.join("checkpoint.bin")).data()?;
        write(&dir.join("history.json"), history.to_json())?;
        let test = per_dataset_report(&[&best], &data.test, mode, Average::Macro).data()?;
        let best_rec = &history.epochs[history.best_epoch];
        for t in best.active_tasks() {
            let test_f1 = test
                .aggregate(*t)
                .map_or_else(|| "n/a".to_string(), |r| format!("{:.4}", r.macro_f1));
            println!(
                "{}\t{t}\tbest_epoch {}\tdev_macro_f1 {:.4}\ttest_macro_f1 {test_f1}",
                mode.as_str(),
                history.best_epoch,
                best_rec.dev_macro_f1[t]
            );
        }
    }
    Ok(())
}

pub fn grid(flags: &RunFlags, space: &Path, budget: Option<usize>, parallel: bool) -> CmdResult {
    let mut cfg = RunConfig::load(flags)?;
    let mut models = cfg.models()?;
    if models.len() != 1 {
        return Err(Failure::config("grid searches one model; for STL pass a single task with --tasks"));
    }
    let (_, net) = models.remove(0);
    let space: GridSpace = read_json(space)?;
    let data = load_data(&cfg, &net)?;
    let outcome = grid_search(&space, &net, &cfg.train, &data, budget, parallel)?;
    let dir = output_dir(&cfg, None)?;
    let tsv = outcome.to_tsv();
    write(&dir.join("grid.tsv"), &tsv)?;
    write(&dir.join("grid.json"), serde_json::to_string_pretty(&outcome).expect("outcome serializes"))?;
    print!("{tsv}");
    Ok(())
}

fn load_model(dir: &Path) -> CmdResult<Model> {
    let text = fs::read_to_string(dir.join("model.json"))
        .map_err(|e| Failure::data(format!("{}: {e}", dir.join("model.json").display())))?;
    let net = NetworkConfig::from_json(&text)?;
    let params = ParamStore::load(dir.join("checkpoint.bin")).data()?;
    Ok(Model::from_params(&net, params)?)
}

/// The MTL model in `dir`, or the per-task STL models in its task subdirectories.
fn load_models(dir: &Path) -> CmdResult<(Vec<Model>, Mode)> {
    if dir.join("model.json").exists() {
        let m = load_model(dir)?;
        let mode = if m.active_tasks().len() == 1 { Mode::Stl } else { Mode::Mtl };
        return Ok((vec![m], mode));
    }
    let mut models = Vec::new();
    for t in Task::ALL {
        let sub = dir.join(t.as_str());
        if sub.join("model.json").exists() {
            models.push(load_model(&sub)?);
        }
    }
    if models.is_empty() {
        return Err(Failure::data(format!("{}: no model.json found", dir.display())));
    }
    Ok((models, Mode::Stl))
}

pub fn eval(flags: &RunFlags, checkpoint: &Path, set: SetName, average: Average) -> CmdResult {
    let mut cfg = RunConfig::load(flags)?;
    let (models, mode) = load_models(checkpoint)?;
    let first = models[0].config();
    if models.iter().any(|m| m.config().feature != first.feature || m.config().vector_dims != first.vector_dims) {
        return Err(Failure::config("stored models disagree on their input features"));
    }
    let data = load_data(&cfg, first)?;
    let refs: Vec<&Model> = models.iter().collect();
    let report = per_dataset_report(&refs, data.set(set), mode, average).data()?;
    if cfg.out.is_none() {
        cfg.out = Some(checkpoint.to_path_buf());
    }
    let dir = output_dir(&cfg, None)?;
    let tsv = report.to_tsv();
    write(&dir.join("report.tsv"), &tsv)?;
    write(&dir.join("report.json"), report.to_json())?;
    print!("{tsv}");
    Ok(())
}
