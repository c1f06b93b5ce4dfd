use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{conv, lstm, Grads, Matrix, NnError, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Identity; used for output logits.
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Linear => "linear",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            _ => Err(format!("unknown activation {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    /// The final time step.
    Last,
}

impl FromStr for PoolMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(PoolMode::Mean),
            "last" => Ok(PoolMode::Last),
            _ => Err(format!("unknown pool mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    /// Applied independently to every row.
    Dense {
        units: usize,
        activation: Activation,
        #[serde(default)]
        dropout: f64,
    },
    Conv1d {
        num_filters: usize,
        filter_size: usize,
        activation: Activation,
        #[serde(default)]
        dropout: f64,
    },
    Lstm {
        hidden: usize,
        #[serde(default)]
        bidirectional: bool,
        /// Candidate and cell-output activation.
        #[serde(default = "default_lstm_activation")]
        activation: Activation,
        #[serde(default)]
        dropout: f64,
    },
    Pool {
        #[serde(default)]
        mode: PoolMode,
    },
}

fn default_lstm_activation() -> Activation {
    Activation::Tanh
}

impl LayerSpec {
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match *self {
            LayerSpec::Dense { units, .. } => units,
            LayerSpec::Conv1d { num_filters, .. } => num_filters,
            LayerSpec::Lstm {
                hidden, bidirectional, ..
            } => {
                if bidirectional {
                    2 * hidden
                } else {
                    hidden
                }
            }
            LayerSpec::Pool { .. } => input_dim,
        }
    }

    pub fn dropout(&self) -> f64 {
        match *self {
            LayerSpec::Dense { dropout, .. } | LayerSpec::Conv1d { dropout, .. } | LayerSpec::Lstm { dropout, .. } => {
                dropout
            }
            LayerSpec::Pool { .. } => 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let p = self.dropout();
        if !(0.0..1.0).contains(&p) {
            return Err(format!("dropout {p} outside [0, 1)"));
        }
        match *self {
            LayerSpec::Dense { units: 0, .. } => Err("dense layer with zero units".into()),
            LayerSpec::Conv1d { num_filters: 0, .. } => Err("conv layer with zero filters".into()),
            LayerSpec::Conv1d { filter_size: 0, .. } => Err("conv layer with zero filter size".into()),
            LayerSpec::Lstm { hidden: 0, .. } => Err("lstm layer with zero hidden units".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
enum LayerTape {
    Dense {
        input: Matrix,
        /// Activation output before dropout.
        output: Matrix,
        mask: Option<Matrix>,
    },
    Conv {
        cols: Matrix,
        output: Matrix,
        mask: Option<Matrix>,
    },
    Lstm {
        input: Matrix,
        fwd: lstm::LstmCache,
        bwd: Option<lstm::LstmCache>,
        mask: Option<Matrix>,
    },
    Pool {
        rows: usize,
    },
}

/// Everything [`Stack::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    input_rows: usize,
    layers: Vec<LayerTape>,
}

impl Tape {
    /// Which ReLU units were active, in a fixed order. Two forward passes with
    /// equal signatures ran through the same linear pieces.
    pub fn relu_signature(&self, stack: &Stack) -> Vec<bool> {
        let mut sig = Vec::new();
        for (spec, tape) in stack.layers.iter().zip(&self.layers) {
            let relu = matches!(
                spec,
                LayerSpec::Dense { activation: Activation::Relu, .. }
                    | LayerSpec::Conv1d { activation: Activation::Relu, .. }
                    | LayerSpec::Lstm { activation: Activation::Relu, .. }
            );
            if !relu {
                continue;
            }
            match tape {
                LayerTape::Dense { output, .. } | LayerTape::Conv { output, .. } => {
                    sig.extend(output.iter().map(|v| *v > 0.0));
                }
                LayerTape::Lstm { fwd, bwd, .. } => {
                    fwd.relu_signature(&mut sig);
                    if let Some(b) = bwd {
                        b.relu_signature(&mut sig);
                    }
                }
                LayerTape::Pool { .. } => {}
            }
        }
        sig
    }
}

fn stream_id(name: &str) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf29ce484222325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn dropout_mask(rows: usize, cols: usize, p: f64, seed: u64, layer_name: &str) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(layer_name));
    let keep = 1.0 - p;
    let mut m = Matrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            if rng.gen::<f64>() < keep {
                m[(r, c)] = 1.0 / keep;
            }
        }
    }
    m
}

fn add_bias(m: &mut Matrix, b: &Matrix) {
    for mut row in m.row_iter_mut() {
        row += b;
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    Matrix::from_fn(1, m.ncols(), |_, j| m.column(j).sum())
}

fn shape_err(layer: usize, message: String) -> NnError {
    NnError::Shape { layer, message }
}

/// An ordered list of layers whose parameters are stored under `prefix`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub prefix: String,
    pub layers: Vec<LayerSpec>,
    pub input_dim: usize,
}

impl Stack {
    pub fn new(prefix: impl Into<String>, layers: Vec<LayerSpec>, input_dim: usize) -> Result<Self, NnError> {
        if input_dim == 0 {
            return Err(NnError::Config("stack input dimension is zero".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            l.validate().map_err(|m| NnError::Config(format!("layer {i}: {m}")))?;
        }
        Ok(Self {
            prefix: prefix.into(),
            layers,
            input_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.iter().fold(self.input_dim, |d, l| l.output_dim(d))
    }

    fn name(&self, layer: usize, tensor: &str) -> String {
        format!("{}{layer}.{tensor}", self.prefix)
    }

    /// Names and `(rows, cols)` shapes of every parameter, in layer order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let mut out = Vec::new();
        let mut dim = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            match *l {
                LayerSpec::Dense { units, .. } => {
                    out.push((self.name(i, "w"), (dim, units)));
                    out.push((self.name(i, "b"), (1, units)));
                }
                LayerSpec::Conv1d {
                    num_filters,
                    filter_size,
                    ..
                } => {
                    out.push((self.name(i, "w"), (filter_size * dim, num_filters)));
                    out.push((self.name(i, "b"), (1, num_filters)));
                }
                LayerSpec::Lstm {
                    hidden, bidirectional, ..
                } => {
                    let dirs: &[&str] = if bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
                    for d in dirs {
                        out.push((self.name(i, &format!("{d}.w")), (dim, 4 * hidden)));
                        out.push((self.name(i, &format!("{d}.u")), (hidden, 4 * hidden)));
                        out.push((self.name(i, &format!("{d}.b")), (1, 4 * hidden)));
                    }
                }
                LayerSpec::Pool { .. } => {}
            }
            dim = l.output_dim(dim);
        }
        out
    }

    /// Dense and conv weights are uniform in `±sqrt(3 / fan_in)`; LSTM
    /// weights uniform in `±1/sqrt(H)` with forget-gate biases at 1; other
    /// biases zero.
    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let mut dim = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            let mut uniform = |rows: usize, cols: usize, limit: f64| {
                Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..=limit))
            };
            match *l {
                LayerSpec::Dense { units, .. } => {
                    store.insert(self.name(i, "w"), uniform(dim, units, (3.0 / dim as f64).sqrt()));
                    store.insert(self.name(i, "b"), Matrix::zeros(1, units));
                }
                LayerSpec::Conv1d {
                    num_filters,
                    filter_size,
                    ..
                } => {
                    let fan_in = filter_size * dim;
                    store.insert(
                        self.name(i, "w"),
                        uniform(fan_in, num_filters, (3.0 / fan_in as f64).sqrt()),
                    );
                    store.insert(self.name(i, "b"), Matrix::zeros(1, num_filters));
                }
                LayerSpec::Lstm {
                    hidden, bidirectional, ..
                } => {
                    let limit = 1.0 / (hidden as f64).sqrt();
                    let dirs: &[&str] = if bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
                    for d in dirs {
                        store.insert(self.name(i, &format!("{d}.w")), uniform(dim, 4 * hidden, limit));
                        store.insert(self.name(i, &format!("{d}.u")), uniform(hidden, 4 * hidden, limit));
                        let b = Matrix::from_fn(1, 4 * hidden, |_, j| if (hidden..2 * hidden).contains(&j) { 1.0 } else { 0.0 });
                        store.insert(self.name(i, &format!("{d}.b")), b);
                    }
                }
                LayerSpec::Pool { .. } => {}
            }
            dim = l.output_dim(dim);
        }
    }

    fn param<'p>(
        &self,
        params: &'p ParamStore,
        layer: usize,
        tensor: &str,
        shape: (usize, usize),
    ) -> Result<&'p Matrix, NnError> {
        let name = self.name(layer, tensor);
        let m = params.get(&name)?;
        if m.shape() != shape {
            return Err(shape_err(
                layer,
                format!("parameter {name:?} is {:?}, expected {shape:?}", m.shape()),
            ));
        }
        Ok(m)
    }

    /// Runs the stack. Dropout is applied only when `train`; its masks are a
    /// function of `seed` and the layer's name.
    pub fn forward(&self, params: &ParamStore, input: &Matrix, train: bool, seed: u64) -> Result<(Matrix, Tape), NnError> {
        if input.ncols() != self.input_dim {
            return Err(shape_err(
                0,
                format!("input has {} columns, stack expects {}", input.ncols(), self.input_dim),
            ));
        }
        if input.nrows() == 0 {
            return Err(shape_err(0, "empty input sequence".into()));
        }
        let mut x = input.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            let dim = x.ncols();
            let mask_for = |rows: usize, cols: usize, p: f64| {
                (train && p > 0.0).then(|| dropout_mask(rows, cols, p, seed, &self.name(i, "dropout")))
            };
            match *l {
                LayerSpec::Dense {
                    units,
                    activation,
                    dropout,
                } => {
                    let w = self.param(params, i, "w", (dim, units))?;
                    let b = self.param(params, i, "b", (1, units))?;
                    let mut z = &x * w;
                    add_bias(&mut z, b);
                    let output = z.map(|v| activation.apply(v));
                    let mask = mask_for(output.nrows(), units, dropout);
                    let next = match &mask {
                        Some(m) => output.component_mul(m),
                        None => output.clone(),
                    };
                    tapes.push(LayerTape::Dense {
                        input: std::mem::replace(&mut x, next),
                        output,
                        mask,
                    });
                }
                LayerSpec::Conv1d {
                    num_filters,
                    filter_size,
                    activation,
                    dropout,
                } => {
                    let w = self.param(params, i, "w", (filter_size * dim, num_filters))?;
                    let b = self.param(params, i, "b", (1, num_filters))?;
                    let cols = conv::im2col(&x, filter_size);
                    let mut z = &cols * w;
                    add_bias(&mut z, b);
                    let output = z.map(|v| activation.apply(v));
                    let mask = mask_for(output.nrows(), num_filters, dropout);
                    x = match &mask {
                        Some(m) => output.component_mul(m),
                        None => output.clone(),
                    };
                    tapes.push(LayerTape::Conv { cols, output, mask });
                }
                LayerSpec::Lstm {
                    hidden,
                    bidirectional,
                    activation,
                    dropout,
                } => {
                    let get = |d: &str| -> Result<(&Matrix, &Matrix, &Matrix), NnError> {
                        Ok((
                            self.param(params, i, &format!("{d}.w"), (dim, 4 * hidden))?,
                            self.param(params, i, &format!("{d}.u"), (hidden, 4 * hidden))?,
                            self.param(params, i, &format!("{d}.b"), (1, 4 * hidden))?,
                        ))
                    };
                    let (w, u, b) = get("fwd")?;
                    let (hf, fwd) = lstm::forward(&x, w, u, b, activation, false);
                    let (output, bwd) = if bidirectional {
                        let (w, u, b) = get("bwd")?;
                        let (hb, bwd) = lstm::forward(&x, w, u, b, activation, true);
                        let mut both = Matrix::zeros(x.nrows(), 2 * hidden);
                        both.columns_mut(0, hidden).copy_from(&hf);
                        both.columns_mut(hidden, hidden).copy_from(&hb);
                        (both, Some(bwd))
                    } else {
                        (hf, None)
                    };
                    let mask = mask_for(output.nrows(), output.ncols(), dropout);
                    let next = match &mask {
                        Some(m) => output.component_mul(m),
                        None => output,
                    };
                    tapes.push(LayerTape::Lstm {
                        input: std::mem::replace(&mut x, next),
                        fwd,
                        bwd,
                        mask,
                    });
                }
                LayerSpec::Pool { mode } => {
                    let rows = x.nrows();
                    x = match mode {
                        PoolMode::Mean => column_sums(&x) / rows as f64,
                        PoolMode::Last => x.rows(rows - 1, 1).into_owned(),
                    };
                    tapes.push(LayerTape::Pool { rows });
                }
            }
        }
        Ok((
            x,
            Tape {
                version: params.version(),
                input_rows: input.nrows(),
                layers: tapes,
            },
        ))
    }

    /// Gradients of every parameter of the stack and of its input, given the
    /// gradient of the loss with respect to the stack's output.
    pub fn backward(&self, params: &ParamStore, tape: &Tape, upstream: &Matrix) -> Result<(Grads, Matrix), NnError> {
        if tape.version != params.version() {
            return Err(NnError::StaleTape {
                tape: tape.version,
                store: params.version(),
            });
        }
        if tape.layers.len() != self.layers.len() {
            return Err(shape_err(0, "tape was recorded on a different stack".into()));
        }
        let mut grads = Grads::new();
        let mut g = upstream.clone();
        for (i, (l, t)) in self.layers.iter().zip(&tape.layers).enumerate().rev() {
            match (*l, t) {
                (LayerSpec::Dense { units, activation, .. }, LayerTape::Dense { input, output, mask }) => {
                    if g.shape() != output.shape() {
                        return Err(shape_err(i, format!("upstream {:?} vs output {:?}", g.shape(), output.shape())));
                    }
                    let w = self.param(params, i, "w", (input.ncols(), units))?;
                    if let Some(m) = mask {
                        g.component_mul_assign(m);
                    }
                    let dz = g.zip_map(output, |gi, y| gi * activation.derivative_from_output(y));
                    grads.insert(self.name(i, "w"), input.tr_mul(&dz));
                    grads.insert(self.name(i, "b"), column_sums(&dz));
                    g = dz * w.transpose();
                }
                (
                    LayerSpec::Conv1d {
                        num_filters,
                        filter_size,
                        activation,
                        ..
                    },
                    LayerTape::Conv { cols, output, mask },
                ) => {
                    if g.shape() != output.shape() {
                        return Err(shape_err(i, format!("upstream {:?} vs output {:?}", g.shape(), output.shape())));
                    }
                    let w = self.param(params, i, "w", (cols.ncols(), num_filters))?;
                    if let Some(m) = mask {
                        g.component_mul_assign(m);
                    }
                    let dz = g.zip_map(output, |gi, y| gi * activation.derivative_from_output(y));
                    grads.insert(self.name(i, "w"), cols.tr_mul(&dz));
                    grads.insert(self.name(i, "b"), column_sums(&dz));
                    let dcols = dz * w.transpose();
                    g = conv::col2im(&dcols, cols.nrows(), cols.ncols() / filter_size, filter_size);
                }
                (LayerSpec::Lstm { hidden, .. }, LayerTape::Lstm { input, fwd, bwd, mask }) => {
                    let width = if bwd.is_some() { 2 * hidden } else { hidden };
                    if g.shape() != (input.nrows(), width) {
                        return Err(shape_err(i, format!("upstream {:?} vs output {:?}", g.shape(), (input.nrows(), width))));
                    }
                    if let Some(m) = mask {
                        g.component_mul_assign(m);
                    }
                    let dim = input.ncols();
                    let mut dx = Matrix::zeros(input.nrows(), dim);
                    let dirs: Vec<(&str, &lstm::LstmCache, usize)> = match bwd {
                        Some(b) => vec![("fwd", fwd, 0), ("bwd", b, hidden)],
                        None => vec![("fwd", fwd, 0)],
                    };
                    for (d, cache, offset) in dirs {
                        let w = self.param(params, i, &format!("{d}.w"), (dim, 4 * hidden))?;
                        let u = self.param(params, i, &format!("{d}.u"), (hidden, 4 * hidden))?;
                        let dout = g.columns(offset, hidden).into_owned();
                        let lg = lstm::backward(input, w, u, cache, &dout);
                        grads.insert(self.name(i, &format!("{d}.w")), lg.w);
                        grads.insert(self.name(i, &format!("{d}.u")), lg.u);
                        grads.insert(self.name(i, &format!("{d}.b")), lg.b);
                        dx += lg.x;
                    }
                    g = dx;
                }
                (LayerSpec::Pool { mode }, LayerTape::Pool { rows }) => {
                    if g.nrows() != 1 {
                        return Err(shape_err(i, format!("pool upstream has {} rows", g.nrows())));
                    }
                    let cols = g.ncols();
                    g = match mode {
                        PoolMode::Mean => Matrix::from_fn(*rows, cols, |_, c| g[(0, c)] / *rows as f64),
                        PoolMode::Last => Matrix::from_fn(*rows, cols, |r, c| if r + 1 == *rows { g[(0, c)] } else { 0.0 }),
                    };
                }
                _ => return Err(shape_err(i, "tape does not match layer kind".into())),
            }
        }
        if g.nrows() != tape.input_rows {
            return Err(shape_err(0, "input gradient row count mismatch".into()));
        }
        Ok((grads, g))
    }
}
