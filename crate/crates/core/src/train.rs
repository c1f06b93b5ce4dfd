//! Per-task batching, the multi-task training loop and grid search.
//!
//! Every batch carries a single task. Its cross-entropy flows back through
//! that task's head and the shared trunk; other heads are untouched. In
//! sequential mode an epoch runs all batches of one task before the next; in
//! shuffled mode the same batches are interleaved at random.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Dataset, SetName, SplitManifest, Task};
use crate::eval::{argmax, macro_f1, ConfusionMatrix, EvalError};
use crate::model::{build_network, ranges, Model, ModelError, NetworkConfig, TrunkKind};
use crate::nn::{accumulate_grads, scale_grads, Activation, Grads, LayerSpec, Matrix, NnError, Optimizer, OptimizerSpec};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("no training utterances labelled for {0}")]
    EmptyTask(Task),
    #[error("no dev utterances labelled for {0}")]
    NoDevData(Task),
    #[error("utterance {0:?} has no input features")]
    MissingInput(String),
    #[error("utterance {0:?} is not in the split")]
    NotInSplit(String),
    #[error("utterance {id:?}: input has {got} columns, model expects {expected}")]
    InputShape { id: String, expected: usize, got: usize },
    #[error("training diverged at epoch {epoch}, batch {batch}: {message}")]
    Divergence { epoch: usize, batch: usize, message: String },
    #[error("grid point {index}: {source}")]
    GridPoint {
        index: usize,
        #[source]
        source: Box<TrainError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> TrainError {
    TrainError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// One utterance ready for the network.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub dataset: Dataset,
    /// `T x C` frames or a `1 x D` vector.
    pub input: Matrix,
    /// Class index per task, in [`Task::ALL`] order.
    pub labels: [Option<usize>; 3],
}

impl Sample {
    pub fn label(&self, task: Task) -> Option<usize> {
        self.labels[task.index()]
    }
}

#[derive(Debug, Clone, Default)]
pub struct DataSplit {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl DataSplit {
    pub fn set(&self, set: SetName) -> &[Sample] {
        match set {
            SetName::Train => &self.train,
            SetName::Dev => &self.dev,
            SetName::Test => &self.test,
        }
    }
}

/// Pairs every corpus record with its input and split assignment, in corpus order.
pub fn assemble_data(
    corpus: &Corpus,
    split: &SplitManifest,
    inputs: &BTreeMap<String, Matrix>,
) -> Result<DataSplit, TrainError> {
    let mut data = DataSplit::default();
    for r in corpus.iter() {
        let set = split.set_of(&r.id).ok_or_else(|| TrainError::NotInSplit(r.id.clone()))?;
        let input = inputs.get(&r.id).ok_or_else(|| TrainError::MissingInput(r.id.clone()))?;
        let sample = Sample {
            id: r.id.clone(),
            dataset: r.dataset,
            input: input.clone(),
            labels: Task::ALL.map(|t| r.label(t)),
        };
        match set {
            SetName::Train => data.train.push(sample),
            SetName::Dev => data.dev.push(sample),
            SetName::Test => data.test.push(sample),
        }
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleMode {
    /// Each task's batches run to completion before the next task's.
    Sequential,
    /// All tasks' batches interleaved in a seeded random order.
    #[default]
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: ScheduleMode,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerSpec,
    /// Integer replication of each task's training pool; missing tasks use 1.
    pub task_factors: BTreeMap<Task, usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: ScheduleMode::Shuffled,
            batch_size: 32,
            epochs: 20,
            optimizer: OptimizerSpec::default(),
            task_factors: BTreeMap::new(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn factor(&self, task: Task) -> usize {
        self.task_factors.get(&task).copied().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(config_err("train.epochs", "must be at least 1"));
        }
        for (task, f) in &self.task_factors {
            if *f == 0 {
                return Err(config_err(format!("train.task_factors.{task}"), "must be at least 1"));
            }
        }
        self.optimizer
            .validate()
            .map_err(|m| config_err("train.optimizer", m))
    }
}

/// A run of training samples (indices into the train set) for one task.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Batch {
    pub task: Task,
    pub indices: Vec<usize>,
}

/// SplitMix64 finalizer over a combined value; used to derive sub-seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(0x632BE59BD9B4E5F5);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// The task's labelled training pool, replicated `factor` times, shuffled by
/// `seed` and cut into batches; the last batch may be short.
pub fn make_task_batches(
    train: &[Sample],
    task: Task,
    batch_size: usize,
    factor: usize,
    seed: u64,
) -> Result<Vec<Batch>, TrainError> {
    if batch_size == 0 || factor == 0 {
        return Err(config_err("train", "batch size and factor must be positive"));
    }
    let pool: Vec<usize> = (0..train.len()).filter(|&i| train[i].label(task).is_some()).collect();
    if pool.is_empty() {
        return Err(TrainError::EmptyTask(task));
    }
    let mut all: Vec<usize> = Vec::with_capacity(pool.len() * factor);
    for _ in 0..factor {
        all.extend_from_slice(&pool);
    }
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(all
        .chunks(batch_size)
        .map(|c| Batch {
            task,
            indices: c.to_vec(),
        })
        .collect())
}

/// All batches of one epoch in schedule order.
pub fn epoch_batches(train: &[Sample], tasks: &[Task], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Batch>, TrainError> {
    let epoch_seed = mix_seed(cfg.seed, epoch as u64);
    let mut batches = Vec::new();
    for task in Task::ALL.iter().filter(|t| tasks.contains(t)) {
        let seed = mix_seed(epoch_seed, 1 + task.index() as u64);
        batches.extend(make_task_batches(train, *task, cfg.batch_size, cfg.factor(*task), seed)?);
    }
    if cfg.mode == ScheduleMode::Shuffled {
        batches.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(epoch_seed, 0)));
    }
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample training cross-entropy.
    pub train_loss: BTreeMap<Task, f64>,
    pub dev_macro_f1: BTreeMap<Task, f64>,
    /// Mean of `dev_macro_f1` over the active tasks.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    /// `head_updates[h][t]`: optimizer steps that changed head `h` while
    /// processing a batch of task `t`.
    pub head_updates: BTreeMap<Task, BTreeMap<Task, u64>>,
}

impl TrainHistory {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("history serializes")
    }
}

/// Macro-F1 per active task over the labelled samples of `samples`.
pub fn task_scores(model: &Model, samples: &[Sample]) -> Result<BTreeMap<Task, f64>, TrainError> {
    let mut cms: BTreeMap<Task, ConfusionMatrix> = model
        .active_tasks()
        .iter()
        .map(|t| (*t, ConfusionMatrix::new(&t.class_names())))
        .collect();
    for s in samples {
        if !model.active_tasks().iter().any(|t| s.label(*t).is_some()) {
            continue;
        }
        let probs = model.predict_matrix(&s.input)?;
        for (task, cm) in cms.iter_mut() {
            if let Some(gold) = s.label(*task) {
                cm.add(gold, argmax(&probs[task]))?;
            }
        }
    }
    let mut out = BTreeMap::new();
    for (task, cm) in cms {
        if cm.total() == 0 {
            return Err(TrainError::NoDevData(task));
        }
        out.insert(task, macro_f1(&cm));
    }
    Ok(out)
}

pub fn selection_score(scores: &BTreeMap<Task, f64>) -> f64 {
    scores.values().sum::<f64>() / scores.len() as f64
}

fn check_inputs(model: &Model, samples: &[Sample]) -> Result<(), TrainError> {
    let expected = model.config().input_dim();
    for s in samples {
        if s.input.ncols() != expected || s.input.nrows() == 0 {
            return Err(TrainError::InputShape {
                id: s.id.clone(),
                expected,
                got: s.input.ncols(),
            });
        }
        if !model.config().feature.is_sequence() && s.input.nrows() != 1 {
            return Err(TrainError::InputShape {
                id: s.id.clone(),
                expected,
                got: s.input.ncols(),
            });
        }
    }
    Ok(())
}

/// Trains `model` and returns it with the parameters of the best dev epoch.
pub fn train(mut model: Model, data: &DataSplit, cfg: &TrainConfig) -> Result<(Model, TrainHistory), TrainError> {
    cfg.validate()?;
    check_inputs(&model, &data.train)?;
    check_inputs(&model, &data.dev)?;
    let tasks = model.active_tasks().to_vec();
    for t in &tasks {
        if !data.dev.iter().any(|s| s.label(*t).is_some()) {
            return Err(TrainError::NoDevData(*t));
        }
    }
    let mut optimizer = Optimizer::new(cfg.optimizer);
    let mut step: u64 = 0;
    let mut history = TrainHistory {
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_score: f64::NEG_INFINITY,
        head_updates: tasks
            .iter()
            .map(|h| (*h, tasks.iter().map(|t| (*t, 0)).collect()))
            .collect(),
    };
    let mut best_params = model.params.clone();

    for epoch in 0..cfg.epochs {
        let batches = epoch_batches(&data.train, &tasks, cfg, epoch)?;
        let mut loss_sum: BTreeMap<Task, (f64, usize)> = BTreeMap::new();
        for (b, batch) in batches.iter().enumerate() {
            let diverged = |message: String| TrainError::Divergence {
                epoch,
                batch: b,
                message,
            };
            let mut grads = Grads::new();
            for (pos, &i) in batch.indices.iter().enumerate() {
                let s = &data.train[i];
                let label = s.label(batch.task).expect("batch pools hold labelled samples");
                let seed = mix_seed(mix_seed(cfg.seed, step), pos as u64);
                let (loss, g) = model.loss_and_grads(&s.input, batch.task, label, seed)?;
                if !loss.is_finite() {
                    return Err(diverged(format!("non-finite loss on {:?}", s.id)));
                }
                let acc = loss_sum.entry(batch.task).or_insert((0.0, 0));
                acc.0 += loss;
                acc.1 += 1;
                accumulate_grads(&mut grads, g);
            }
            scale_grads(&mut grads, 1.0 / batch.indices.len() as f64);
            match optimizer.step(&mut model.params, &grads, step) {
                Ok(()) => {}
                Err(NnError::NonFinite(name)) => return Err(diverged(format!("non-finite update of {name}"))),
                Err(e) => return Err(TrainError::Model(e.into())),
            }
            for head in &tasks {
                let prefix = format!("head.{head}.");
                if grads.keys().any(|n| n.starts_with(&prefix)) {
                    *history
                        .head_updates
                        .get_mut(head)
                        .and_then(|m| m.get_mut(&batch.task))
                        .expect("counter for every active pair") += 1;
                }
            }
            step += 1;
        }
        let dev = task_scores(&model, &data.dev)?;
        let score = selection_score(&dev);
        if score > history.best_score {
            history.best_score = score;
            history.best_epoch = epoch;
            best_params = model.params.clone();
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect(),
            dev_macro_f1: dev,
            score,
        });
    }
    let best = Model::from_params(model.config(), best_params)?;
    Ok((best, history))
}

/// Lists of values to search. Empty lists leave the base configuration's value.
/// Trunk-layer axes rewrite every trunk layer; head axes rewrite every head.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpace {
    /// FC units or LSTM hidden size.
    pub hidden: Vec<usize>,
    /// Trunk layer count.
    pub layers: Vec<usize>,
    pub activation: Vec<Activation>,
    pub dropout: Vec<f64>,
    pub filters: Vec<usize>,
    pub filter_size: Vec<usize>,
    pub bidirectional: Vec<bool>,
    pub head_hidden: Vec<usize>,
    pub head_layers: Vec<usize>,
    pub head_activation: Vec<Activation>,
    pub head_dropout: Vec<f64>,
    pub lr: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Int(usize),
    Real(f64),
    Act(Activation),
    Flag(bool),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Int(v) => write!(f, "{v}"),
            GridValue::Real(v) => write!(f, "{v}"),
            GridValue::Act(v) => write!(f, "{v}"),
            GridValue::Flag(v) => write!(f, "{v}"),
        }
    }
}

impl GridSpace {
    /// Non-empty axes in declaration order.
    pub fn axes(&self) -> Vec<(&'static str, Vec<GridValue>)> {
        let ints = |v: &[usize]| v.iter().map(|x| GridValue::Int(*x)).collect::<Vec<_>>();
        let reals = |v: &[f64]| v.iter().map(|x| GridValue::Real(*x)).collect::<Vec<_>>();
        let acts = |v: &[Activation]| v.iter().map(|x| GridValue::Act(*x)).collect::<Vec<_>>();
        let all = vec![
            ("hidden", ints(&self.hidden)),
            ("layers", ints(&self.layers)),
            ("activation", acts(&self.activation)),
            ("dropout", reals(&self.dropout)),
            ("filters", ints(&self.filters)),
            ("filter_size", ints(&self.filter_size)),
            ("bidirectional", self.bidirectional.iter().map(|b| GridValue::Flag(*b)).collect()),
            ("head_hidden", ints(&self.head_hidden)),
            ("head_layers", ints(&self.head_layers)),
            ("head_activation", acts(&self.head_activation)),
            ("head_dropout", reals(&self.head_dropout)),
            ("lr", reals(&self.lr)),
        ];
        all.into_iter().filter(|(_, v)| !v.is_empty()).collect()
    }

    pub fn size(&self) -> usize {
        self.axes().iter().map(|(_, v)| v.len()).product()
    }

    /// Cartesian product, first axis slowest.
    pub fn points(&self) -> Vec<Vec<(&'static str, GridValue)>> {
        let axes = self.axes();
        let mut out = vec![Vec::new()];
        for (name, values) in &axes {
            out = out
                .into_iter()
                .flat_map(|prefix: Vec<(&'static str, GridValue)>| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((*name, *v));
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Checks every listed value against the search ranges for `trunk`.
    pub fn validate(&self, trunk: TrunkKind) -> Result<(), TrainError> {
        use ranges::*;
        fn check<T: PartialEq + std::fmt::Debug>(field: &str, values: &[T], allowed: &[T]) -> Result<(), TrainError> {
            for v in values {
                if !allowed.contains(v) {
                    return Err(config_err(format!("grid.{field}"), format!("{v:?} not in {allowed:?}")));
                }
            }
            Ok(())
        }
        let not_for = |field: &str, values_len: usize| {
            if values_len > 0 {
                Err(config_err(format!("grid.{field}"), format!("does not apply to a {trunk} trunk")))
            } else {
                Ok(())
            }
        };
        match trunk {
            TrunkKind::Fc => {
                check("hidden", &self.hidden, &FC_HIDDEN)?;
                check("activation", &self.activation, &FC_ACTIVATIONS)?;
                not_for("filters", self.filters.len())?;
                not_for("filter_size", self.filter_size.len())?;
                not_for("bidirectional", self.bidirectional.len())?;
            }
            TrunkKind::Cnn => {
                not_for("hidden", self.hidden.len())?;
                check("filters", &self.filters, &CNN_FILTERS)?;
                check("filter_size", &self.filter_size, &CNN_FILTER_SIZES)?;
                check("activation", &self.activation, &SEQ_ACTIVATIONS)?;
                not_for("bidirectional", self.bidirectional.len())?;
            }
            TrunkKind::Lstm => {
                check("hidden", &self.hidden, &LSTM_HIDDEN)?;
                check("activation", &self.activation, &SEQ_ACTIVATIONS)?;
                not_for("filters", self.filters.len())?;
                not_for("filter_size", self.filter_size.len())?;
            }
        }
        check("layers", &self.layers, &LAYER_COUNTS)?;
        for p in &self.dropout {
            if !contains_f64(&TRUNK_DROPOUT, *p) {
                return Err(config_err("grid.dropout", format!("{p} not in {TRUNK_DROPOUT:?}")));
            }
        }
        check("head_hidden", &self.head_hidden, &HEAD_HIDDEN)?;
        check("head_layers", &self.head_layers, &HEAD_LAYERS)?;
        check("head_activation", &self.head_activation, &HEAD_ACTIVATIONS)?;
        for p in &self.head_dropout {
            if !contains_f64(&HEAD_DROPOUT, *p) {
                return Err(config_err("grid.head_dropout", format!("{p} not in {HEAD_DROPOUT:?}")));
            }
        }
        for lr in &self.lr {
            if !(*lr > 0.0 && lr.is_finite()) {
                return Err(config_err("grid.lr", format!("{lr} is not a positive learning rate")));
            }
        }
        Ok(())
    }
}

/// The configurations a grid point describes.
pub fn apply_point(
    point: &[(&'static str, GridValue)],
    base_net: &NetworkConfig,
    base_train: &TrainConfig,
) -> (NetworkConfig, TrainConfig) {
    let mut net = base_net.clone();
    let mut tc = base_train.clone();
    let mut layer = net.trunk_layers[0];
    let mut count = net.trunk_layers.len();
    let mut layer_touched = false;
    for (name, value) in point {
        match (*name, *value) {
            ("hidden", GridValue::Int(v)) => {
                layer_touched = true;
                match &mut layer {
                    LayerSpec::Dense { units, .. } => *units = v,
                    LayerSpec::Lstm { hidden, .. } => *hidden = v,
                    _ => {}
                }
            }
            ("layers", GridValue::Int(v)) => count = v,
            ("activation", GridValue::Act(a)) => {
                layer_touched = true;
                match &mut layer {
                    LayerSpec::Dense { activation, .. }
                    | LayerSpec::Conv1d { activation, .. }
                    | LayerSpec::Lstm { activation, .. } => *activation = a,
                    LayerSpec::Pool { .. } => {}
                }
            }
            ("dropout", GridValue::Real(p)) => {
                layer_touched = true;
                match &mut layer {
                    LayerSpec::Dense { dropout, .. } | LayerSpec::Conv1d { dropout, .. } | LayerSpec::Lstm { dropout, .. } => {
                        *dropout = p
                    }
                    LayerSpec::Pool { .. } => {}
                }
            }
            ("filters", GridValue::Int(v)) => {
                layer_touched = true;
                if let LayerSpec::Conv1d { num_filters, .. } = &mut layer {
                    *num_filters = v;
                }
            }
            ("filter_size", GridValue::Int(v)) => {
                layer_touched = true;
                if let LayerSpec::Conv1d { filter_size, .. } = &mut layer {
                    *filter_size = v;
                }
            }
            ("bidirectional", GridValue::Flag(b)) => {
                layer_touched = true;
                if let LayerSpec::Lstm { bidirectional, .. } = &mut layer {
                    *bidirectional = b;
                }
            }
            ("head_hidden", GridValue::Int(v)) => net.heads.values_mut().for_each(|h| h.hidden = v),
            ("head_layers", GridValue::Int(v)) => net.heads.values_mut().for_each(|h| h.layers = v),
            ("head_activation", GridValue::Act(a)) => net.heads.values_mut().for_each(|h| h.activation = a),
            ("head_dropout", GridValue::Real(p)) => net.heads.values_mut().for_each(|h| h.dropout = p),
            ("lr", GridValue::Real(v)) => match &mut tc.optimizer {
                OptimizerSpec::Sgd { lr, .. } | OptimizerSpec::Adam { lr, .. } => *lr = v,
            },
            _ => unreachable!("axis {name} with value {value:?}"),
        }
    }
    if layer_touched || count != net.trunk_layers.len() {
        net.trunk_layers = vec![layer; count];
    }
    (net, tc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Position in enumeration order.
    pub index: usize,
    pub values: Vec<(String, GridValue)>,
    pub dev_macro_f1: BTreeMap<Task, f64>,
    pub score: f64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub axes: Vec<String>,
    pub tasks: Vec<Task>,
    /// Best first; equal scores keep enumeration order.
    pub ranked: Vec<GridResult>,
}

impl GridOutcome {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rank\tindex");
        for a in &self.axes {
            let _ = write!(out, "\t{a}");
        }
        for t in &self.tasks {
            let _ = write!(out, "\tf1_{t}");
        }
        out.push_str("\tscore\tbest_epoch\n");
        for (rank, r) in self.ranked.iter().enumerate() {
            let _ = write!(out, "{}\t{}", rank + 1, r.index);
            for (_, v) in &r.values {
                let _ = write!(out, "\t{v}");
            }
            for t in &self.tasks {
                let _ = write!(out, "\t{:.6}", r.dev_macro_f1.get(t).copied().unwrap_or(f64::NAN));
            }
            let _ = writeln!(out, "\t{:.6}\t{}", r.score, r.best_epoch);
        }
        out
    }
}

/// Trains the first `budget` points (all when `None`) of `space` and ranks them
/// by dev selection score. Points run concurrently when `parallel`; results
/// are gathered in enumeration order either way.
pub fn grid_search(
    space: &GridSpace,
    base_net: &NetworkConfig,
    base_train: &TrainConfig,
    data: &DataSplit,
    budget: Option<usize>,
    parallel: bool,
) -> Result<GridOutcome, TrainError> {
    space.validate(base_net.trunk)?;
    base_net.validate()?;
    base_train.validate()?;
    let total = space.size();
    let n = budget.unwrap_or(total);
    if n > total {
        return Err(config_err("grid.budget", format!("{n} exceeds the {total} grid points")));
    }
    if n == 0 {
        return Err(config_err("grid.budget", "must be at least 1"));
    }
    let points: Vec<_> = space.points().into_iter().take(n).collect();
    for p in &points {
        let (net, tc) = apply_point(p, base_net, base_train);
        net.validate()?;
        tc.validate()?;
    }
    let run = |(index, point): (usize, &Vec<(&'static str, GridValue)>)| -> Result<GridResult, TrainError> {
        let (net, tc) = apply_point(point, base_net, base_train);
        let model = build_network(&net, tc.seed)?;
        let (_, history) = train(model, data, &tc).map_err(|e| TrainError::GridPoint {
            index,
            source: Box::new(e),
        })?;
        let best = &history.epochs[history.best_epoch];
        Ok(GridResult {
            index,
            values: point.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            dev_macro_f1: best.dev_macro_f1.clone(),
            score: history.best_score,
            best_epoch: history.best_epoch,
        })
    };
    let results: Vec<GridResult> = if parallel {
        points.par_iter().enumerate().map(run).collect::<Result<_, _>>()?
    } else {
        points.iter().enumerate().map(run).collect::<Result<_, _>>()?
    };
    let mut ranked = results;
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    Ok(GridOutcome {
        axes: space.axes().iter().map(|(k, _)| k.to_string()).collect(),
        tasks: Task::ALL.into_iter().filter(|t| base_net.active_tasks.contains(t)).collect(),
        ranked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                id: format!("u{i}"),
                dataset: Dataset::KSUEmotion,
                input: Matrix::zeros(1, 2),
                labels: [Some(i % 2), (i % 3 != 0).then_some(i % 6), None],
            })
            .collect()
    }

    #[test]
    fn batch_arithmetic() {
        let train = samples(100);
        let b = make_task_batches(&train, Task::Gender, 32, 3, 0).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.iter().map(|x| x.indices.len()).sum::<usize>(), 300);
        assert_eq!(b.last().unwrap().indices.len(), 12);
        assert!(b[..9].iter().all(|x| x.indices.len() == 32));
    }

    #[test]
    fn pools_exclude_unlabelled() {
        let train = samples(30);
        let b = make_task_batches(&train, Task::Emotion, 7, 1, 1).unwrap();
        let used: Vec<usize> = b.iter().flat_map(|x| x.indices.clone()).collect();
        assert_eq!(used.len(), 20);
        assert!(used.iter().all(|i| train[*i].label(Task::Emotion).is_some()));
        assert!(matches!(
            make_task_batches(&train, Task::Dialect, 7, 1, 1),
            Err(TrainError::EmptyTask(Task::Dialect))
        ));
    }

    #[test]
    fn batches_deterministic_per_seed() {
        let train = samples(50);
        let a = make_task_batches(&train, Task::Gender, 8, 2, 9).unwrap();
        assert_eq!(a, make_task_batches(&train, Task::Gender, 8, 2, 9).unwrap());
        assert_ne!(a, make_task_batches(&train, Task::Gender, 8, 2, 10).unwrap());
    }

    #[test]
    fn modes_share_the_batch_multiset() {
        let train = samples(40);
        let tasks = [Task::Gender, Task::Emotion];
        let mut cfg = TrainConfig {
            batch_size: 6,
            ..TrainConfig::default()
        };
        cfg.task_factors.insert(Task::Emotion, 2);
        cfg.mode = ScheduleMode::Sequential;
        let mut seq = epoch_batches(&train, &tasks, &cfg, 3).unwrap();
        let first_emotion = seq.iter().position(|b| b.task == Task::Emotion).unwrap();
        assert!(seq[..first_emotion].iter().all(|b| b.task == Task::Gender));
        assert!(seq[first_emotion..].iter().all(|b| b.task == Task::Emotion));
        cfg.mode = ScheduleMode::Shuffled;
        let mut shuf = epoch_batches(&train, &tasks, &cfg, 3).unwrap();
        assert_ne!(seq, shuf);
        seq.sort();
        shuf.sort();
        assert_eq!(seq, shuf);
    }

    #[test]
    fn grid_enumeration_order() {
        let space = GridSpace {
            hidden: vec![16, 32],
            layers: vec![1, 2],
            ..GridSpace::default()
        };
        assert_eq!(space.size(), 4);
        let pts: Vec<String> = space
            .points()
            .iter()
            .map(|p| p.iter().map(|(_, v)| v.to_string()).collect::<Vec<_>>().join(","))
            .collect();
        assert_eq!(pts, vec!["16,1", "16,2", "32,1", "32,2"]);
    }

    #[test]
    fn grid_rejects_out_of_range() {
        let space = GridSpace {
            hidden: vec![512],
            ..GridSpace::default()
        };
        let err = space.validate(TrunkKind::Fc).unwrap_err();
        assert!(matches!(err, TrainError::Config { ref field, .. } if field == "grid.hidden"));
        let space = GridSpace {
            filters: vec![32],
            ..GridSpace::default()
        };
        assert!(space.validate(TrunkKind::Fc).is_err());
        assert!(space.validate(TrunkKind::Cnn).is_ok());
    }

    #[test]
    fn config_validation_paths() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config { ref field, .. }) if field == "train.epochs"));
        let mut cfg = TrainConfig::default();
        cfg.task_factors.insert(Task::Dialect, 0);
        assert!(matches!(cfg.validate(), Err(TrainError::Config { ref field, .. }) if field == "train.task_factors.dialect"));
    }
}
