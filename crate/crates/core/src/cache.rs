//! Binary container for features, fixed vectors, GMMs and parameter tensors.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SPRT"            4 bytes magic
//! version: u32      = 1
//! count:   u32      number of entries
//! per entry:
//!   id_len: u16, id: UTF-8 bytes
//!   kind:   u8     0 MEL, 1 MFCC, 2 fixed vector, 3 GMM, 4 parameter tensor
//!   rows:   u32, cols: u32
//!   rows*cols values, row-major
//! ```
//!
//! Kinds 0-2 store 32-bit floats. Kinds 3 and 4 store 64-bit floats so model
//! parameters reload bit-identically. Entries are written in id order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsp::{FeatureKind, FeatureMatrix};

pub const MAGIC: &[u8; 4] = b"SPRT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes {0:?}, expected \"SPRT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("truncated container: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("entry {id:?}: unknown kind code {code}")]
    UnknownKind { id: String, code: u8 },
    #[error("entry id is not valid UTF-8")]
    BadId,
    #[error("duplicate entry id {0:?}")]
    DuplicateId(String),
    #[error("entry {id:?}: {message}")]
    Invalid { id: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum KindCode {
    Mel = 0,
    Mfcc = 1,
    FixedVector = 2,
    Gmm = 3,
    Tensor = 4,
}

impl KindCode {
    fn from_u8(code: u8) -> Option<Self> {
        Some(match code {
            0 => KindCode::Mel,
            1 => KindCode::Mfcc,
            2 => KindCode::FixedVector,
            3 => KindCode::Gmm,
            4 => KindCode::Tensor,
            _ => return None,
        })
    }

    fn is_wide(self) -> bool {
        matches!(self, KindCode::Gmm | KindCode::Tensor)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub kind: KindCode,
    pub rows: usize,
    pub cols: usize,
    pub data: Payload,
}

impl Entry {
    pub fn new(kind: KindCode, rows: usize, cols: usize, data: Payload) -> Self {
        Self {
            kind,
            rows,
            cols,
            data,
        }
    }
}

/// Id-keyed entries; ids are unique by construction.
pub type Container = BTreeMap<String, Entry>;

pub fn encode(entries: &Container) -> Result<Vec<u8>, CacheError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| CacheError::Invalid {
        id: String::new(),
        message: "too many entries".into(),
    })?;
    out.extend_from_slice(&count.to_le_bytes());
    for (id, e) in entries {
        let invalid = |message: String| CacheError::Invalid {
            id: id.clone(),
            message,
        };
        let id_len = u16::try_from(id.len()).map_err(|_| invalid("id longer than 65535 bytes".into()))?;
        if e.rows * e.cols != e.data.len() {
            return Err(invalid(format!(
                "{}x{} shape but {} values",
                e.rows,
                e.cols,
                e.data.len()
            )));
        }
        let wide = matches!(e.data, Payload::F64(_));
        if wide != e.kind.is_wide() {
            return Err(invalid(format!("payload width does not match kind {:?}", e.kind)));
        }
        let rows = u32::try_from(e.rows).map_err(|_| invalid("too many rows".into()))?;
        let cols = u32::try_from(e.cols).map_err(|_| invalid("too many cols".into()))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.push(e.kind as u8);
        out.extend_from_slice(&rows.to_le_bytes());
        out.extend_from_slice(&cols.to_le_bytes());
        match &e.data {
            Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CacheError> {
        let remaining = self.buf.len() - self.pos;
        if remaining < n {
            return Err(CacheError::Truncated {
                offset: self.pos,
                needed: n - remaining,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CacheError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CacheError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CacheError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Container, CacheError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CacheError::BadMagic(magic));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CacheError::BadVersion(version));
    }
    let count = r.u32()?;
    let mut entries = Container::new();
    for _ in 0..count {
        let id_len = r.u16()? as usize;
        let id = std::str::from_utf8(r.take(id_len)?)
            .map_err(|_| CacheError::BadId)?
            .to_string();
        let code = r.u8()?;
        let kind = KindCode::from_u8(code).ok_or_else(|| CacheError::UnknownKind {
            id: id.clone(),
            code,
        })?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| CacheError::Invalid {
            id: id.clone(),
            message: "shape overflows".into(),
        })?;
        let data = if kind.is_wide() {
            let raw = r.take(n.checked_mul(8).unwrap_or(usize::MAX))?;
            Payload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        } else {
            let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX))?;
            Payload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        };
        if entries.contains_key(&id) {
            return Err(CacheError::DuplicateId(id));
        }
        entries.insert(id, Entry::new(kind, rows, cols, data));
    }
    if r.pos != bytes.len() {
        return Err(CacheError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(entries)
}

pub fn write_container(path: impl AsRef<Path>, entries: &Container) -> Result<(), CacheError> {
    let path = path.as_ref();
    let bytes = encode(entries)?;
    std::fs::write(path, bytes).map_err(|source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container, CacheError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}

/// A feature-cache item: a frame matrix or an untyped fixed-length vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CacheItem {
    Features(FeatureMatrix),
    Vector(Vec<f32>),
}

impl CacheItem {
    fn to_entry(&self) -> Entry {
        match self {
            CacheItem::Features(m) => Entry::new(
                match m.kind() {
                    FeatureKind::Mel => KindCode::Mel,
                    FeatureKind::Mfcc => KindCode::Mfcc,
                },
                m.rows(),
                m.cols(),
                Payload::F32(m.values().to_vec()),
            ),
            CacheItem::Vector(v) => {
                Entry::new(KindCode::FixedVector, 1, v.len(), Payload::F32(v.clone()))
            }
        }
    }

    fn from_entry(id: &str, e: Entry) -> Result<Self, CacheError> {
        let invalid = |message: String| CacheError::Invalid {
            id: id.to_string(),
            message,
        };
        let Payload::F32(values) = e.data else {
            return Err(invalid(format!("kind {:?} is not a feature-cache entry", e.kind)));
        };
        match e.kind {
            KindCode::Mel | KindCode::Mfcc => {
                let kind = if e.kind == KindCode::Mel {
                    FeatureKind::Mel
                } else {
                    FeatureKind::Mfcc
                };
                FeatureMatrix::new(kind, e.rows, values)
                    .map(CacheItem::Features)
                    .map_err(invalid)
            }
            KindCode::FixedVector => {
                if e.rows != 1 {
                    return Err(invalid(format!("fixed vector with {} rows", e.rows)));
                }
                Ok(CacheItem::Vector(values))
            }
            other => Err(invalid(format!("kind {other:?} is not a feature-cache entry"))),
        }
    }
}

pub fn write_feature_cache(
    path: impl AsRef<Path>,
    items: &BTreeMap<String, CacheItem>,
) -> Result<(), CacheError> {
    let entries = items
        .iter()
        .map(|(id, item)| (id.clone(), item.to_entry()))
        .collect();
    write_container(path, &entries)
}

pub fn read_feature_cache(path: impl AsRef<Path>) -> Result<BTreeMap<String, CacheItem>, CacheError> {
    read_container(path)?
        .into_iter()
        .map(|(id, e)| CacheItem::from_entry(&id, e).map(|item| (id, item)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mel(rows: usize) -> FeatureMatrix {
        let values = (0..rows * 24).map(|i| (i as f32 * 0.37).sin() * 10.0).collect();
        FeatureMatrix::new(FeatureKind::Mel, rows, values).unwrap()
    }

    #[test]
    fn mel_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let mut items = BTreeMap::new();
        items.insert("u1".to_string(), CacheItem::Features(mel(98)));
        items.insert("u2".to_string(), CacheItem::Vector(vec![1.5, -0.0, f32::MIN_POSITIVE]));
        write_feature_cache(&p, &items).unwrap();
        let back = read_feature_cache(&p).unwrap();
        assert_eq!(back, items);
        let CacheItem::Vector(v) = &back["u2"] else { panic!() };
        assert_eq!(v[1].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn empty_map() {
        let bytes = encode(&Container::new()).unwrap();
        assert_eq!(bytes.len(), 12);
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn header_layout() {
        let mut c = Container::new();
        c.insert(
            "ab".into(),
            Entry::new(KindCode::FixedVector, 1, 2, Payload::F32(vec![1.0, 2.0])),
        );
        let b = encode(&c).unwrap();
        assert_eq!(&b[0..4], b"SPRT");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u16::from_le_bytes(b[12..14].try_into().unwrap()), 2);
        assert_eq!(&b[14..16], b"ab");
        assert_eq!(b[16], 2);
        assert_eq!(u32::from_le_bytes(b[17..21].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[21..25].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[25..29].try_into().unwrap()), 1.0);
        assert_eq!(b.len(), 33);
    }

    #[test]
    fn corrupted_magic() {
        let mut b = encode(&Container::new()).unwrap();
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(CacheError::BadMagic(_))));
    }

    #[test]
    fn bad_version() {
        let mut b = encode(&Container::new()).unwrap();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(CacheError::BadVersion(2))));
    }

    #[test]
    fn truncated() {
        let mut items = BTreeMap::new();
        items.insert("u1".to_string(), CacheItem::Features(mel(3)));
        let entries: Container = items.iter().map(|(k, v)| (k.clone(), v.to_entry())).collect();
        let b = encode(&entries).unwrap();
        for cut in [3, 11, 15, b.len() - 1] {
            assert!(
                matches!(decode(&b[..cut]), Err(CacheError::Truncated { .. })),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn wide_payload_round_trip() {
        let mut c = Container::new();
        c.insert(
            "w".into(),
            Entry::new(KindCode::Tensor, 2, 2, Payload::F64(vec![0.1, 1e-300, -3.0, f64::MAX])),
        );
        assert_eq!(decode(&encode(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut c = Container::new();
        c.insert(
            "w".into(),
            Entry::new(KindCode::Tensor, 2, 2, Payload::F64(vec![0.1])),
        );
        assert!(encode(&c).is_err());
    }
}
