//! Multi-task classification of speaker gender, emotion and dialect.
//!
//! The crate covers the whole pipeline:
//!
//! - [`corpus`]: utterance records, WAV ingestion and speaker-disjoint splitting
//! - [`dsp`]: framing, power spectra, log-mel and MFCC features
//! - [`cache`]: the binary container used for features, vectors, GMMs and checkpoints
//! - [`gmm`]: diagonal-covariance GMM trained with EM (the UBM)
//! - [`ivector`]: total-variability i-vectors and external d/x-vector stores
//! - [`nn`]: a small reverse-mode network engine (dense, conv1d, LSTM)
//! - [`model`]: the shared-trunk / per-task-head network assembly
//! - [`train`]: per-task batching, the training loop and grid search
//! - [`eval`]: confusion matrices, F1, accuracy and per-dataset reports

pub mod cache;
pub mod corpus;
pub mod dsp;
pub mod eval;
pub mod gmm;
pub mod ivector;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use corpus::{Corpus, Dataset, Dialect, Emotion, Gender, SetName, Task, UtteranceRecord};
