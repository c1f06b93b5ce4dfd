use std::collections::BTreeMap;
use std::path::Path;

use super::{Matrix, NnError};
use crate::cache::{read_container, write_container, Container, Entry, KindCode, Payload};

/// Gradients keyed by parameter name. Parameters a pass never touched are absent.
pub type Grads = BTreeMap<String, Matrix>;

/// Adds `from` into `into`, inserting names not yet present.
pub fn accumulate_grads(into: &mut Grads, from: Grads) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => *acc += g,
            None => {
                into.insert(name, g);
            }
        }
    }
}

pub fn scale_grads(grads: &mut Grads, factor: f64) {
    for g in grads.values_mut() {
        *g *= factor;
    }
}

/// Named parameter tensors. Every mutation bumps a version counter so tapes
/// recorded against older values can be detected.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Matrix>,
    version: u64,
}

/// Equal when the tensors are equal, regardless of modification history.
impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.tensors == other.tensors
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.tensors.insert(name.into(), value);
        self.version += 1;
    }

    pub fn get(&self, name: &str) -> Result<&Matrix, NnError> {
        self.tensors.get(name).ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Mutable access; counts as a modification.
    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix, NnError> {
        self.version += 1;
        self.tensors
            .get_mut(name)
            .ok_or_else(|| NnError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Replaces several tensors at once as a single modification.
    pub(crate) fn commit(&mut self, updates: Vec<(String, Matrix)>) {
        for (name, value) in updates {
            self.tensors.insert(name, value);
        }
        self.version += 1;
    }

    pub fn to_container(&self) -> Container {
        self.tensors
            .iter()
            .map(|(name, m)| {
                let mut data = Vec::with_capacity(m.len());
                for r in 0..m.nrows() {
                    data.extend(m.row(r).iter());
                }
                (name.clone(), Entry::new(KindCode::Tensor, m.nrows(), m.ncols(), Payload::F64(data)))
            })
            .collect()
    }

    pub fn from_container(container: &Container) -> Result<Self, NnError> {
        let mut store = ParamStore::new();
        for (name, entry) in container {
            let Payload::F64(data) = &entry.data else {
                return Err(NnError::Config(format!("entry {name:?} is not a tensor")));
            };
            if entry.kind != KindCode::Tensor {
                return Err(NnError::Config(format!("entry {name:?} is not a tensor")));
            }
            store.insert(name.clone(), Matrix::from_row_slice(entry.rows, entry.cols, data));
        }
        store.version = 0;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        Ok(write_container(path, &self.to_container())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_container(&read_container(path)?)
    }
}
