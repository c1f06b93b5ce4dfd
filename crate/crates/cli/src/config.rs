//! The JSON run configuration and its command-line overrides. Flags win over
//! the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparta::cache::{read_feature_cache, CacheItem};
use sparta::dsp::DspConfig;
use sparta::ivector::VectorPart;
use sparta::model::{FeatureInput, NetworkConfig, TrunkKind};
use sparta::train::TrainConfig;
use sparta::Task;

use crate::failure::{Classify, CmdResult, Failure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    /// One model per task, each with a single active head.
    Stl,
    /// One model with a head per task, trained jointly.
    #[default]
    Mtl,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    /// Feature caches keyed by `mel`, `mfcc`, `i`, `d` or `x`.
    pub caches: BTreeMap<String, PathBuf>,
    pub split: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Shortcut used when `network` is absent.
    pub feature: Option<FeatureInput>,
    pub network: Option<NetworkConfig>,
    pub train: TrainConfig,
    pub dsp: DspConfig,
    pub mode: RunMode,
    /// Parameter initialization seed.
    pub seed: u64,
}

/// Flags shared by the commands that read a run configuration.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct RunFlags {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Corpus manifest (JSON lines).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Feature cache, as `KEY=PATH` with KEY one of mel, mfcc, i, d, x; a bare
    /// path is taken as the cache of the configured frame feature.
    #[arg(long = "cache")]
    pub caches: Vec<String>,
    /// Split manifest.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Network input: MEL, MFCC, i, d, x, id, ix, dx or idx.
    #[arg(long)]
    pub features: Option<FeatureInput>,
    /// Seed for initialization and training.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<RunMode>,
    /// Comma-separated tasks, e.g. `g,e,d`.
    #[arg(long, value_delimiter = ',')]
    pub tasks: Option<Vec<Task>>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load(flags: &RunFlags) -> CmdResult<Self> {
        let mut cfg: RunConfig = match &flags.config {
            Some(path) => read_json(path)?,
            None => RunConfig::default(),
        };
        if let Some(m) = &flags.manifest {
            cfg.manifest = Some(m.clone());
        }
        if let Some(s) = &flags.split {
            cfg.split = Some(s.clone());
        }
        if let Some(o) = &flags.out {
            cfg.out = Some(o.clone());
        }
        if let Some(f) = flags.features {
            cfg.feature = Some(f);
            if let Some(net) = &mut cfg.network {
                net.feature = f;
            }
        }
        if let Some(seed) = flags.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(mode) = flags.mode {
            cfg.mode = mode;
        }
        for spec in &flags.caches {
            let (key, path) = match spec.split_once('=') {
                Some((k, p)) => (k.to_string(), PathBuf::from(p)),
                None => {
                    let feature = cfg.network.as_ref().map(|n| n.feature).or(cfg.feature);
                    match feature {
                        Some(FeatureInput::Mel) => ("mel".to_string(), PathBuf::from(spec)),
                        Some(FeatureInput::Mfcc) => ("mfcc".to_string(), PathBuf::from(spec)),
                        _ => {
                            return Err(Failure::config(format!(
                                "--cache {spec}: fixed-vector caches need a KEY=PATH form"
                            )))
                        }
                    }
                }
            };
            if !["mel", "mfcc", "i", "d", "x"].contains(&key.as_str()) {
                return Err(Failure::config(format!("--cache {spec}: unknown key {key:?}")));
            }
            cfg.caches.insert(key, path);
        }
        if let Some(tasks) = &flags.tasks {
            let net = cfg.network_mut()?;
            net.active_tasks = Task::ALL.into_iter().filter(|t| tasks.contains(t)).collect();
            for t in &net.active_tasks {
                net.heads.entry(*t).or_default();
            }
        }
        Ok(cfg)
    }

    /// The network, built from `feature` with default layers when none is given.
    pub fn network_mut(&mut self) -> CmdResult<&mut NetworkConfig> {
        if self.network.is_none() {
            let feature = self
                .feature
                .ok_or_else(|| Failure::config("feature: required (set it in the config or pass --features)"))?;
            let trunk = if feature.is_sequence() { TrunkKind::Cnn } else { TrunkKind::Fc };
            let mut net = NetworkConfig::default_for(feature, trunk, &Task::ALL);
            if let FeatureInput::Vector(kind) = feature {
                // Vector widths come from the caches; unreadable ones are reported when loaded.
                for part in kind.parts() {
                    let Some(path) = self.caches.get(&part.as_char().to_string()) else { continue };
                    if let Ok(Some(CacheItem::Vector(v))) = read_feature_cache(path).map(|c| c.into_values().next()) {
                        match part {
                            VectorPart::I => net.vector_dims.i = v.len(),
                            VectorPart::D => net.vector_dims.d = v.len(),
                            VectorPart::X => net.vector_dims.x = v.len(),
                        }
                    }
                }
            }
            self.network = Some(net);
        }
        Ok(self.network.as_mut().expect("just set"))
    }

    pub fn network(&mut self) -> CmdResult<NetworkConfig> {
        let net = self.network_mut()?.clone();
        net.validate().config()?;
        self.train.validate()?;
        Ok(net)
    }

    pub fn require<'a>(value: &'a Option<PathBuf>, name: &str) -> CmdResult<&'a Path> {
        value
            .as_deref()
            .ok_or_else(|| Failure::config(format!("{name}: required (set it in the config or pass --{name})")))
    }

    /// Networks to train: the configured one for MTL, or one single-head copy per task for STL.
    pub fn models(&mut self) -> CmdResult<Vec<(Option<Task>, NetworkConfig)>> {
        let net = self.network()?;
        Ok(match self.mode {
            RunMode::Mtl => vec![(None, net)],
            RunMode::Stl => net
                .active_tasks
                .iter()
                .map(|t| {
                    let mut single = net.clone();
                    single.active_tasks = vec![*t];
                    single.heads.retain(|k, _| k == t);
                    (Some(*t), single)
                })
                .collect(),
        })
    }
}
