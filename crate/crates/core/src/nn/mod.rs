//! A small reverse-mode network engine over `f64` matrices.
//!
//! Activations are `T x C` matrices (rows are time steps; fixed vectors are a
//! single row). A [`Stack`] is an ordered list of [`LayerSpec`]s whose
//! parameters live in a shared [`ParamStore`] under a name prefix, so several
//! stacks (a trunk and its heads) can share one store.

mod conv;
mod gradcheck;
mod layers;
mod loss;
mod lstm;
mod optim;
mod params;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::cache::CacheError;

pub use gradcheck::{grad_check, grad_check_report, GradCheckReport, DEFAULT_SAMPLE_CAP};
pub use layers::{Activation, LayerSpec, PoolMode, Stack, Tape};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{Optimizer, OptimizerSpec};
pub use params::{accumulate_grads, scale_grads, Grads, ParamStore};

pub type Matrix = DMatrix<f64>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("layer {layer}: {message}")]
    Shape { layer: usize, message: String },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("stale tape: recorded at parameter version {tape}, store is at version {store}")]
    StaleTape { tape: u64, store: u64 },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("non-finite value in {0:?}; update refused")]
    NonFinite(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
}
