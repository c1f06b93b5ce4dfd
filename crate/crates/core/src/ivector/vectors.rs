use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IvectorError;
use crate::cache::{read_feature_cache, write_feature_cache, CacheItem};

/// One source of fixed-length utterance embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorPart {
    I,
    D,
    X,
}

impl VectorPart {
    pub const ALL: [VectorPart; 3] = [VectorPart::I, VectorPart::D, VectorPart::X];

    pub fn as_char(self) -> char {
        match self {
            VectorPart::I => 'i',
            VectorPart::D => 'd',
            VectorPart::X => 'x',
        }
    }
}

/// A single embedding kind or a concatenation, always in `i, d, x` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VectorKind {
    I,
    D,
    X,
    Id,
    Ix,
    Dx,
    Idx,
}

impl VectorKind {
    pub const ALL: [VectorKind; 7] = [
        VectorKind::I,
        VectorKind::D,
        VectorKind::X,
        VectorKind::Id,
        VectorKind::Ix,
        VectorKind::Dx,
        VectorKind::Idx,
    ];

    pub fn parts(self) -> &'static [VectorPart] {
        use VectorPart::*;
        match self {
            VectorKind::I => &[I],
            VectorKind::D => &[D],
            VectorKind::X => &[X],
            VectorKind::Id => &[I, D],
            VectorKind::Ix => &[I, X],
            VectorKind::Dx => &[D, X],
            VectorKind::Idx => &[I, D, X],
        }
    }

    /// The kind made of exactly these parts, in any order. Repeats are ignored.
    pub fn from_parts(parts: &[VectorPart]) -> Option<Self> {
        let has = |p| parts.contains(&p);
        let key = (has(VectorPart::I), has(VectorPart::D), has(VectorPart::X));
        Some(match key {
            (true, false, false) => VectorKind::I,
            (false, true, false) => VectorKind::D,
            (false, false, true) => VectorKind::X,
            (true, true, false) => VectorKind::Id,
            (true, false, true) => VectorKind::Ix,
            (false, true, true) => VectorKind::Dx,
            (true, true, true) => VectorKind::Idx,
            (false, false, false) => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            VectorKind::I => "i",
            VectorKind::D => "d",
            VectorKind::X => "x",
            VectorKind::Id => "id",
            VectorKind::Ix => "ix",
            VectorKind::Dx => "dx",
            VectorKind::Idx => "idx",
        }
    }

    pub fn dim(self, dims: &VectorDims) -> usize {
        self.parts().iter().map(|p| dims.of(*p)).sum()
    }
}

impl fmt::Display for VectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VectorKind::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown vector kind {s:?}"))
    }
}

/// Dimensions of the three embedding sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorDims {
    pub i: usize,
    pub d: usize,
    pub x: usize,
}

pub const DEFAULT_IVECTOR_DIM: usize = 400;
pub const DVECTOR_DIM: usize = 256;
pub const DEFAULT_XVECTOR_DIM: usize = 512;

impl Default for VectorDims {
    fn default() -> Self {
        Self {
            i: DEFAULT_IVECTOR_DIM,
            d: DVECTOR_DIM,
            x: DEFAULT_XVECTOR_DIM,
        }
    }
}

impl VectorDims {
    pub fn of(&self, part: VectorPart) -> usize {
        match part {
            VectorPart::I => self.i,
            VectorPart::D => self.d,
            VectorPart::X => self.x,
        }
    }
}

/// A fixed-length utterance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedVector {
    pub kind: VectorKind,
    pub values: Vec<f32>,
}

impl FixedVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Embeddings of one part, keyed by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    pub part: VectorPart,
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f32>>,
}

impl VectorStore {
    pub fn new(part: VectorPart, dim: usize) -> Self {
        Self {
            part,
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, values: Vec<f32>) -> Result<(), IvectorError> {
        let id = id.into();
        if values.len() != self.dim {
            return Err(IvectorError::DimMismatch {
                id,
                expected: self.dim,
                got: values.len(),
            });
        }
        self.vectors.insert(id, values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<FixedVector> {
        self.vectors.get(id).map(|v| FixedVector {
            kind: VectorKind::from_parts(&[self.part]).expect("single part"),
            values: v.clone(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IvectorError> {
        let items = self
            .vectors
            .iter()
            .map(|(id, v)| (id.clone(), CacheItem::Vector(v.clone())))
            .collect();
        Ok(write_feature_cache(path, &items)?)
    }
}

/// Reads a container of fixed vectors, checking every entry against the
/// dimension declared for `part`.
pub fn load_external_vectors(
    path: impl AsRef<Path>,
    part: VectorPart,
    dims: &VectorDims,
) -> Result<VectorStore, IvectorError> {
    let mut store = VectorStore::new(part, dims.of(part));
    for (id, item) in read_feature_cache(path)? {
        match item {
            CacheItem::Vector(v) => store.insert(id, v)?,
            CacheItem::Features(m) => {
                return Err(IvectorError::WrongEntry {
                    id,
                    message: format!("{:?} frame matrix where a fixed vector was expected", m.kind()),
                })
            }
        }
    }
    Ok(store)
}

/// Concatenates the requested parts for one utterance in canonical `i, d, x` order.
pub fn concat_vectors(
    parts: &[VectorPart],
    stores: &BTreeMap<VectorPart, VectorStore>,
    id: &str,
) -> Result<FixedVector, IvectorError> {
    let kind = VectorKind::from_parts(parts).ok_or(IvectorError::EmptyKinds)?;
    let mut values = Vec::new();
    for part in kind.parts() {
        let store = stores.get(part).ok_or(IvectorError::MissingStore(*part))?;
        let v = store.vectors.get(id).ok_or_else(|| IvectorError::MissingId {
            id: id.to_string(),
            part: *part,
        })?;
        values.extend_from_slice(v);
    }
    Ok(FixedVector { kind, values })
}
