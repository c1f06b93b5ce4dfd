//! i-vectors from a total-variability model over UBM statistics, and stores
//! of externally computed d-vectors and x-vectors.

mod stats;
mod tv;
mod vectors;

use thiserror::Error;

use crate::cache::CacheError;
use crate::gmm::GmmError;

pub use stats::{baum_welch_stats, BwStats};
pub use tv::{
    extract_ivector, extract_ivector_raw, length_normalize, train_total_variability,
    train_total_variability_traced, tv_objective, TMatrix,
};
pub use vectors::{
    concat_vectors, load_external_vectors, FixedVector, VectorDims, VectorKind, VectorPart, VectorStore,
    DEFAULT_IVECTOR_DIM, DEFAULT_XVECTOR_DIM, DVECTOR_DIM,
};

#[derive(Debug, Error)]
pub enum IvectorError {
    #[error("empty frame set")]
    EmptyFrames,
    #[error(transparent)]
    Gmm(#[from] GmmError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid training request: {0}")]
    Invalid(String),
    #[error("singular accumulator for component {component} at iteration {iteration}")]
    Singular { iteration: usize, component: usize },
    #[error("vector {id:?}: expected dim {expected}, got {got}")]
    DimMismatch {
        id: String,
        expected: usize,
        got: usize,
    },
    #[error("entry {id:?}: {message}")]
    WrongEntry { id: String, message: String },
    #[error("no vector kinds requested")]
    EmptyKinds,
    #[error("no store loaded for part {0:?}")]
    MissingStore(VectorPart),
    #[error("utterance {id:?} missing from the {part:?} store")]
    MissingId { id: String, part: VectorPart },
}
