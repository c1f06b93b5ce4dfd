//! The shared-trunk network: an input feature kind feeds one trunk (FC, CNN or
//! LSTM) whose output is read by an independent head per active task.
//!
//! Parameters are stored under `trunk.` and `head.<task>.`; a head's
//! gradient never reaches another head. A model with a single active task is
//! the single-task baseline.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Task;
use crate::dsp::{FeatureKind, FeatureMatrix};
use crate::ivector::{FixedVector, VectorDims, VectorKind};
use crate::nn::{
    accumulate_grads, softmax, softmax_cross_entropy, Activation, Grads, LayerSpec, Matrix, NnError, ParamStore,
    PoolMode, Stack,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("input is {got} but the model expects {expected}")]
    FeatureMismatch { expected: FeatureInput, got: FeatureInput },
    #[error("task {0} is not active in this model")]
    InactiveTask(Task),
    #[error(transparent)]
    Nn(#[from] NnError),
}

fn config_err(field: impl Into<String>, message: impl Into<String>) -> ModelError {
    ModelError::Config {
        field: field.into(),
        message: message.into(),
    }
}

/// What the network consumes: a frame sequence or a fixed vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FeatureInput {
    Mel,
    Mfcc,
    Vector(VectorKind),
}

impl FeatureInput {
    pub const ALL: [FeatureInput; 9] = [
        FeatureInput::Mel,
        FeatureInput::Mfcc,
        FeatureInput::Vector(VectorKind::I),
        FeatureInput::Vector(VectorKind::D),
        FeatureInput::Vector(VectorKind::X),
        FeatureInput::Vector(VectorKind::Id),
        FeatureInput::Vector(VectorKind::Ix),
        FeatureInput::Vector(VectorKind::Dx),
        FeatureInput::Vector(VectorKind::Idx),
    ];

    pub fn is_sequence(self) -> bool {
        matches!(self, FeatureInput::Mel | FeatureInput::Mfcc)
    }

    pub fn dim(self, dims: &VectorDims) -> usize {
        match self {
            FeatureInput::Mel => FeatureKind::Mel.dim(),
            FeatureInput::Mfcc => FeatureKind::Mfcc.dim(),
            FeatureInput::Vector(v) => v.dim(dims),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureInput::Mel => "MEL",
            FeatureInput::Mfcc => "MFCC",
            FeatureInput::Vector(v) => v.as_str(),
        }
    }
}

impl From<FeatureKind> for FeatureInput {
    fn from(k: FeatureKind) -> Self {
        match k {
            FeatureKind::Mel => FeatureInput::Mel,
            FeatureKind::Mfcc => FeatureInput::Mfcc,
        }
    }
}

impl fmt::Display for FeatureInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureInput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "MEL" | "mel" => Ok(FeatureInput::Mel),
            "MFCC" | "mfcc" => Ok(FeatureInput::Mfcc),
            _ => s
                .parse::<VectorKind>()
                .map(FeatureInput::Vector)
                .map_err(|_| format!("unknown feature {s:?}")),
        }
    }
}

impl Serialize for FeatureInput {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for FeatureInput {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TrunkKind {
    #[serde(rename = "FC")]
    Fc,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "LSTM")]
    Lstm,
}

impl TrunkKind {
    pub const ALL: [TrunkKind; 3] = [TrunkKind::Fc, TrunkKind::Cnn, TrunkKind::Lstm];

    pub fn as_str(self) -> &'static str {
        match self {
            TrunkKind::Fc => "FC",
            TrunkKind::Cnn => "CNN",
            TrunkKind::Lstm => "LSTM",
        }
    }

    pub fn accepts(self, feature: FeatureInput) -> bool {
        match self {
            TrunkKind::Fc => !feature.is_sequence(),
            TrunkKind::Cnn | TrunkKind::Lstm => feature.is_sequence(),
        }
    }
}

impl fmt::Display for TrunkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrunkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "FC" => Ok(TrunkKind::Fc),
            "CNN" => Ok(TrunkKind::Cnn),
            "LSTM" => Ok(TrunkKind::Lstm),
            _ => Err(format!("unknown trunk {s:?}")),
        }
    }
}

/// Search ranges for every tunable hyperparameter.
pub mod ranges {
    use crate::nn::Activation;

    pub const LAYER_COUNTS: [usize; 3] = [1, 2, 4];
    pub const FC_HIDDEN: [usize; 5] = [16, 32, 64, 128, 256];
    pub const FC_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];
    pub const CNN_FILTERS: [usize; 2] = [32, 64];
    pub const CNN_FILTER_SIZES: [usize; 3] = [3, 4, 5];
    pub const SEQ_ACTIVATIONS: [Activation; 2] = [Activation::Relu, Activation::Tanh];
    pub const LSTM_HIDDEN: [usize; 4] = [16, 32, 64, 128];
    pub const TRUNK_DROPOUT: [f64; 4] = [0.0, 0.1, 0.2, 0.3];
    pub const HEAD_HIDDEN: [usize; 4] = [16, 32, 64, 128];
    pub const HEAD_LAYERS: [usize; 2] = [1, 2];
    pub const HEAD_ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Tanh, Activation::Sigmoid];
    pub const HEAD_DROPOUT: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.5];

    pub fn contains_f64(set: &[f64], v: f64) -> bool {
        set.iter().any(|x| (x - v).abs() < 1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    #[serde(default)]
    pub dropout: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 1,
            activation: Activation::Relu,
            dropout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub feature: FeatureInput,
    pub trunk: TrunkKind,
    pub trunk_layers: Vec<LayerSpec>,
    /// Bridges sequence trunks to the heads; ignored for FC.
    #[serde(default)]
    pub pool: PoolMode,
    pub heads: BTreeMap<Task, HeadConfig>,
    pub active_tasks: Vec<Task>,
    #[serde(default)]
    pub vector_dims: VectorDims,
}

impl NetworkConfig {
    /// A small in-range network for a feature/trunk pair with heads for `tasks`.
    pub fn default_for(feature: FeatureInput, trunk: TrunkKind, tasks: &[Task]) -> Self {
        let layer = match trunk {
            TrunkKind::Fc => LayerSpec::Dense {
                units: 64,
                activation: Activation::Relu,
                dropout: 0.0,
            },
            TrunkKind::Cnn => LayerSpec::Conv1d {
                num_filters: 32,
                filter_size: 3,
                activation: Activation::Relu,
                dropout: 0.0,
            },
            TrunkKind::Lstm => LayerSpec::Lstm {
                hidden: 32,
                bidirectional: false,
                activation: Activation::Tanh,
                dropout: 0.0,
            },
        };
        Self {
            feature,
            trunk,
            trunk_layers: vec![layer],
            pool: PoolMode::Mean,
            heads: tasks.iter().map(|t| (*t, HeadConfig::default())).collect(),
            active_tasks: tasks.to_vec(),
            vector_dims: VectorDims::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.feature.dim(&self.vector_dims)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        use ranges::*;
        if !self.trunk.accepts(self.feature) {
            return Err(config_err(
                "trunk",
                format!("{} features cannot feed a {} trunk", self.feature, self.trunk),
            ));
        }
        if self.active_tasks.is_empty() {
            return Err(config_err("active_tasks", "at least one task must be active"));
        }
        for (i, t) in self.active_tasks.iter().enumerate() {
            if self.active_tasks[..i].contains(t) {
                return Err(config_err("active_tasks", format!("{t} listed twice")));
            }
            if !self.heads.contains_key(t) {
                return Err(config_err(format!("heads.{t}"), "active task has no head configuration"));
            }
        }
        for (part, dim) in [("i", self.vector_dims.i), ("d", self.vector_dims.d), ("x", self.vector_dims.x)] {
            if dim == 0 {
                return Err(config_err(format!("vector_dims.{part}"), "must be positive"));
            }
        }
        if !LAYER_COUNTS.contains(&self.trunk_layers.len()) {
            return Err(config_err(
                "trunk_layers",
                format!("{} layers; allowed counts are {LAYER_COUNTS:?}", self.trunk_layers.len()),
            ));
        }
        for (i, layer) in self.trunk_layers.iter().enumerate() {
            let field = |name: &str| format!("trunk_layers[{i}].{name}");
            let check_dropout = |p: f64| {
                if contains_f64(&TRUNK_DROPOUT, p) {
                    Ok(())
                } else {
                    Err(config_err(field("dropout"), format!("{p} not in {TRUNK_DROPOUT:?}")))
                }
            };
            match (*layer, self.trunk) {
                (
                    LayerSpec::Dense {
                        units,
                        activation,
                        dropout,
                    },
                    TrunkKind::Fc,
                ) => {
                    if !FC_HIDDEN.contains(&units) {
                        return Err(config_err(field("units"), format!("{units} not in {FC_HIDDEN:?}")));
                    }
                    if !FC_ACTIVATIONS.contains(&activation) {
                        return Err(config_err(field("activation"), format!("{activation} not allowed")));
                    }
                    check_dropout(dropout)?;
                }
                (
                    LayerSpec::Conv1d {
                        num_filters,
                        filter_size,
                        activation,
                        dropout,
                    },
                    TrunkKind::Cnn,
                ) => {
                    if !CNN_FILTERS.contains(&num_filters) {
                        return Err(config_err(
                            field("num_filters"),
                            format!("{num_filters} not in {CNN_FILTERS:?}"),
                        ));
                    }
                    if !CNN_FILTER_SIZES.contains(&filter_size) {
                        return Err(config_err(
                            field("filter_size"),
                            format!("{filter_size} not in {CNN_FILTER_SIZES:?}"),
                        ));
                    }
                    if !SEQ_ACTIVATIONS.contains(&activation) {
                        return Err(config_err(field("activation"), format!("{activation} not allowed")));
                    }
                    check_dropout(dropout)?;
                }
                (
                    LayerSpec::Lstm {
                        hidden,
                        activation,
                        dropout,
                        ..
                    },
                    TrunkKind::Lstm,
                ) => {
                    if !LSTM_HIDDEN.contains(&hidden) {
                        return Err(config_err(field("hidden"), format!("{hidden} not in {LSTM_HIDDEN:?}")));
                    }
                    if !SEQ_ACTIVATIONS.contains(&activation) {
                        return Err(config_err(field("activation"), format!("{activation} not allowed")));
                    }
                    check_dropout(dropout)?;
                }
                _ => {
                    return Err(config_err(
                        format!("trunk_layers[{i}]"),
                        format!("layer kind does not belong in a {} trunk", self.trunk),
                    ))
                }
            }
        }
        for (task, head) in &self.heads {
            let field = |name: &str| format!("heads.{task}.{name}");
            if !HEAD_HIDDEN.contains(&head.hidden) {
                return Err(config_err(field("hidden"), format!("{} not in {HEAD_HIDDEN:?}", head.hidden)));
            }
            if !HEAD_LAYERS.contains(&head.layers) {
                return Err(config_err(field("layers"), format!("{} not in {HEAD_LAYERS:?}", head.layers)));
            }
            if !HEAD_ACTIVATIONS.contains(&head.activation) {
                return Err(config_err(field("activation"), format!("{} not allowed", head.activation)));
            }
            if !contains_f64(&HEAD_DROPOUT, head.dropout) {
                return Err(config_err(field("dropout"), format!("{} not in {HEAD_DROPOUT:?}", head.dropout)));
            }
        }
        Ok(())
    }

    pub fn trunk_stack(&self) -> Result<Stack, ModelError> {
        let mut layers = self.trunk_layers.clone();
        if self.feature.is_sequence() {
            layers.push(LayerSpec::Pool { mode: self.pool });
        }
        Ok(Stack::new("trunk.", layers, self.input_dim())?)
    }

    /// Hidden layers of the head followed by a linear output of the task's class count.
    pub fn head_stack(&self, task: Task, trunk_dim: usize) -> Result<Stack, ModelError> {
        let head = self
            .heads
            .get(&task)
            .ok_or_else(|| config_err(format!("heads.{task}"), "missing head configuration"))?;
        let mut layers: Vec<LayerSpec> = (0..head.layers)
            .map(|_| LayerSpec::Dense {
                units: head.hidden,
                activation: head.activation,
                dropout: head.dropout,
            })
            .collect();
        layers.push(LayerSpec::Dense {
            units: task.num_classes(),
            activation: Activation::Linear,
            dropout: 0.0,
        });
        Ok(Stack::new(format!("head.{task}."), layers, trunk_dim)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| config_err("config", e.to_string()))
    }
}

/// The 7 fixed-vector kinds with an FC trunk, then MEL and MFCC with CNN and LSTM.
pub fn enumerate_variants() -> Vec<(FeatureInput, TrunkKind)> {
    let mut out: Vec<(FeatureInput, TrunkKind)> = VectorKind::ALL
        .iter()
        .map(|v| (FeatureInput::Vector(*v), TrunkKind::Fc))
        .collect();
    for f in [FeatureInput::Mel, FeatureInput::Mfcc] {
        for t in [TrunkKind::Cnn, TrunkKind::Lstm] {
            out.push((f, t));
        }
    }
    out
}

/// A model input with its kind, for checked prediction.
#[derive(Debug, Clone, Copy)]
pub enum ModelInput<'a> {
    Frames(&'a FeatureMatrix),
    Vector(&'a FixedVector),
}

impl ModelInput<'_> {
    pub fn feature(&self) -> FeatureInput {
        match self {
            ModelInput::Frames(m) => m.kind().into(),
            ModelInput::Vector(v) => FeatureInput::Vector(v.kind),
        }
    }

    /// `T x C` for frames, `1 x D` for vectors.
    pub fn to_matrix(&self) -> Matrix {
        match self {
            ModelInput::Frames(m) => Matrix::from_fn(m.rows(), m.cols(), |r, c| m.row(r)[c] as f64),
            ModelInput::Vector(v) => Matrix::from_fn(1, v.values.len(), |_, c| v.values[c] as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    config: NetworkConfig,
    pub params: ParamStore,
    trunk: Stack,
    heads: BTreeMap<Task, Stack>,
}

/// Validates `config` and initializes parameters from `seed`: trunk first,
/// then heads in task order.
pub fn build_network(config: &NetworkConfig, seed: u64) -> Result<Model, ModelError> {
    let (trunk, heads) = assemble(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    trunk.init_params(&mut params, &mut rng);
    for head in heads.values() {
        head.init_params(&mut params, &mut rng);
    }
    Ok(Model {
        config: config.clone(),
        params,
        trunk,
        heads,
    })
}

fn assemble(config: &NetworkConfig) -> Result<(Stack, BTreeMap<Task, Stack>), ModelError> {
    config.validate()?;
    let trunk = config.trunk_stack()?;
    let dim = trunk.output_dim();
    let heads = config
        .active_tasks
        .iter()
        .map(|t| Ok((*t, config.head_stack(*t, dim)?)))
        .collect::<Result<BTreeMap<_, _>, ModelError>>()?;
    Ok((trunk, heads))
}

impl Model {
    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(config: &NetworkConfig, params: ParamStore) -> Result<Self, ModelError> {
        let (trunk, heads) = assemble(config)?;
        let mut expected: Vec<(String, (usize, usize))> = trunk.param_shapes();
        for h in heads.values() {
            expected.extend(h.param_shapes());
        }
        if expected.len() != params.len() {
            return Err(config_err(
                "checkpoint",
                format!("{} tensors stored, config implies {}", params.len(), expected.len()),
            ));
        }
        for (name, shape) in expected {
            let m = params
                .get(&name)
                .map_err(|_| config_err("checkpoint", format!("missing tensor {name:?}")))?;
            if m.shape() != shape {
                return Err(config_err(
                    "checkpoint",
                    format!("tensor {name:?} is {:?}, config implies {shape:?}", m.shape()),
                ));
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
            trunk,
            heads,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn active_tasks(&self) -> &[Task] {
        &self.config.active_tasks
    }

    pub fn trunk(&self) -> &Stack {
        &self.trunk
    }

    pub fn head(&self, task: Task) -> Option<&Stack> {
        self.heads.get(&task)
    }

    pub fn input_matrix(&self, input: ModelInput) -> Result<Matrix, ModelError> {
        let got = input.feature();
        if got != self.config.feature {
            return Err(ModelError::FeatureMismatch {
                expected: self.config.feature,
                got,
            });
        }
        Ok(input.to_matrix())
    }

    /// Evaluation-mode logits of every active head.
    pub fn logits(&self, x: &Matrix) -> Result<BTreeMap<Task, Vec<f64>>, ModelError> {
        let (shared, _) = self.trunk.forward(&self.params, x, false, 0)?;
        let mut out = BTreeMap::new();
        for (task, head) in &self.heads {
            let (z, _) = head.forward(&self.params, &shared, false, 0)?;
            out.insert(*task, z.iter().copied().collect());
        }
        Ok(out)
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<BTreeMap<Task, Vec<f64>>, ModelError> {
        Ok(self
            .logits(x)?
            .into_iter()
            .map(|(t, z)| (t, softmax(&z)))
            .collect())
    }

    /// Class distributions of every active task.
    pub fn predict(&self, input: ModelInput) -> Result<BTreeMap<Task, Vec<f64>>, ModelError> {
        self.predict_matrix(&self.input_matrix(input)?)
    }

    /// Training-mode cross-entropy of one labelled example for `task`, with
    /// gradients for the trunk and that task's head only.
    pub fn loss_and_grads(&self, x: &Matrix, task: Task, label: usize, seed: u64) -> Result<(f64, Grads), ModelError> {
        let head = self.heads.get(&task).ok_or(ModelError::InactiveTask(task))?;
        let (shared, trunk_tape) = self.trunk.forward(&self.params, x, true, seed)?;
        let (logits, head_tape) = head.forward(&self.params, &shared, true, seed)?;
        let z: Vec<f64> = logits.iter().copied().collect();
        let (loss, dz) = softmax_cross_entropy(&z, label)?;
        let upstream = Matrix::from_row_slice(1, dz.len(), &dz);
        let (mut grads, dshared) = head.backward(&self.params, &head_tape, &upstream)?;
        let (trunk_grads, _) = self.trunk.backward(&self.params, &trunk_tape, &dshared)?;
        accumulate_grads(&mut grads, trunk_grads);
        Ok((loss, grads))
    }
}
