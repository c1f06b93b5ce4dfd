use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Grads, Matrix, NnError, ParamStore};

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

/// Optimizer choice. The learning rate decays as `lr / (1 + decay * t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OptimizerSpec {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default)]
        decay: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default)]
        decay: f64,
    },
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        OptimizerSpec::Adam {
            lr: 0.01,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            decay: 0.0,
        }
    }
}

impl OptimizerSpec {
    pub fn effective_lr(&self, t: u64) -> f64 {
        let (lr, decay) = match *self {
            OptimizerSpec::Sgd { lr, decay, .. } | OptimizerSpec::Adam { lr, decay, .. } => (lr, decay),
        };
        lr / (1.0 + decay * t as f64)
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |cond: bool, what: &str| if cond { Ok(()) } else { Err(what.to_string()) };
        match *self {
            OptimizerSpec::Sgd { lr, momentum, decay } => {
                ok(lr > 0.0 && lr.is_finite(), "optimizer.lr must be positive")?;
                ok((0.0..1.0).contains(&momentum), "optimizer.momentum must be in [0, 1)")?;
                ok(decay >= 0.0 && decay.is_finite(), "optimizer.decay must be non-negative")
            }
            OptimizerSpec::Adam {
                lr,
                beta1,
                beta2,
                eps,
                decay,
            } => {
                ok(lr > 0.0 && lr.is_finite(), "optimizer.lr must be positive")?;
                ok((0.0..1.0).contains(&beta1), "optimizer.beta1 must be in [0, 1)")?;
                ok((0.0..1.0).contains(&beta2), "optimizer.beta2 must be in [0, 1)")?;
                ok(eps > 0.0, "optimizer.eps must be positive")?;
                ok(decay >= 0.0 && decay.is_finite(), "optimizer.decay must be non-negative")
            }
        }
    }
}

/// Optimizer state. Moments are tracked per parameter and only advance for
/// parameters present in a step's gradients.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    first: BTreeMap<String, Matrix>,
    second: BTreeMap<String, Matrix>,
    updates: BTreeMap<String, u64>,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Self {
        Self {
            spec,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
            updates: BTreeMap::new(),
        }
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    /// Applies one update at schedule step `t`. Nothing is modified if any
    /// gradient or resulting parameter is non-finite.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, t: u64) -> Result<(), NnError> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(NnError::Shape {
                    layer: 0,
                    message: format!("gradient for {name:?} is {:?}, parameter is {:?}", g.shape(), p.shape()),
                });
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(name.clone()));
            }
        }
        let lr = self.spec.effective_lr(t);
        let mut new_params = Vec::with_capacity(grads.len());
        let mut new_first = Vec::new();
        let mut new_second = Vec::new();
        for (name, g) in grads {
            let p = params.get(name)?;
            let updated = match self.spec {
                OptimizerSpec::Sgd { momentum, .. } => {
                    if momentum == 0.0 {
                        p - g * lr
                    } else {
                        let v = match self.first.get(name) {
                            Some(v) => v * momentum - g * lr,
                            None => -g * lr,
                        };
                        let out = p + &v;
                        new_first.push((name.clone(), v));
                        out
                    }
                }
                OptimizerSpec::Adam { beta1, beta2, eps, .. } => {
                    let n = self.updates.get(name).copied().unwrap_or(0) + 1;
                    let m = match self.first.get(name) {
                        Some(m) => m * beta1 + g * (1.0 - beta1),
                        None => g * (1.0 - beta1),
                    };
                    let g2 = g.map(|v| v * v);
                    let v = match self.second.get(name) {
                        Some(v) => v * beta2 + g2 * (1.0 - beta2),
                        None => g2 * (1.0 - beta2),
                    };
                    let c1 = 1.0 - beta1.powi(n as i32);
                    let c2 = 1.0 - beta2.powi(n as i32);
                    let step = m.zip_map(&v, |mi, vi| lr * (mi / c1) / ((vi / c2).sqrt() + eps));
                    let out = p - step;
                    new_first.push((name.clone(), m));
                    new_second.push((name.clone(), v));
                    out
                }
            };
            if updated.iter().any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(name.clone()));
            }
            new_params.push((name.clone(), updated));
        }
        for (name, _) in &new_params {
            *self.updates.entry(name.clone()).or_insert(0) += 1;
        }
        self.first.extend(new_first);
        self.second.extend(new_second);
        params.commit(new_params);
        Ok(())
    }
}
