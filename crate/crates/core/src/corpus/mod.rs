//! Corpus data model, manifest and WAV ingestion, and speaker-disjoint splitting.

mod labels;
mod split;
mod wav;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use labels::{Dataset, Dialect, Emotion, Gender, SetName, Task};
pub use split::{
    parse_split_manifest, proportion_deviation_points, read_split_manifest, split_manifest_to_string,
    split_objective, split_speaker_disjoint, validate_split, write_split_manifest, CellCounts,
    SplitManifest, SplitReport,
};
pub use wav::{read_wav, write_wav, Waveform, SAMPLE_RATE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate utterance id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: {message}")]
    UnknownLabel { line: usize, message: String },
    #[error("line {line}: utterance {id:?} {message}")]
    InvalidRecord {
        line: usize,
        id: String,
        message: String,
    },
    #[error("{path}: unsupported audio format: {message}")]
    Format { path: PathBuf, message: String },
    #[error("infeasible split: {0}")]
    Infeasible(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

/// One audio sample with speaker identity and optional per-task labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub dataset: Dataset,
    pub speaker_id: String,
    pub audio_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<Gender>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dialect: Option<Dialect>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<Emotion>,
}

impl UtteranceRecord {
    /// Class index of this utterance for `task`, if labeled.
    pub fn label(&self, task: Task) -> Option<usize> {
        match task {
            Task::Gender => self.gender.map(Gender::index),
            Task::Emotion => self.emotion.map(Emotion::index),
            Task::Dialect => self.dialect.map(Dialect::index),
        }
    }

    pub fn label_name(&self, task: Task) -> Option<&'static str> {
        match task {
            Task::Gender => self.gender.map(Gender::as_str),
            Task::Emotion => self.emotion.map(Emotion::as_str),
            Task::Dialect => self.dialect.map(Dialect::as_str),
        }
    }

    pub fn has_any_label(&self) -> bool {
        self.gender.is_some() || self.dialect.is_some() || self.emotion.is_some()
    }
}

/// An ordered collection of utterance records with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    records: Vec<UtteranceRecord>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate ids and unlabeled or speakerless records.
    pub fn new(records: Vec<UtteranceRecord>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for (i, r) in records.iter().enumerate() {
            check_record(i + 1, r)?;
            if !seen.insert(r.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    id: r.id.clone(),
                });
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, UtteranceRecord> {
        self.records.iter()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }
}

fn check_record(line: usize, r: &UtteranceRecord) -> Result<(), CorpusError> {
    let invalid = |message: &str| CorpusError::InvalidRecord {
        line,
        id: r.id.clone(),
        message: message.to_string(),
    };
    if r.id.is_empty() {
        return Err(invalid("has an empty id"));
    }
    if r.speaker_id.is_empty() {
        return Err(invalid("has an empty speaker_id"));
    }
    if !r.has_any_label() {
        return Err(invalid("carries no gender, dialect or emotion label"));
    }
    Ok(())
}

#[derive(Deserialize)]
struct RawRecord {
    id: String,
    dataset: String,
    speaker_id: String,
    audio_path: PathBuf,
    #[serde(default)]
    gender: Option<String>,
    #[serde(default)]
    dialect: Option<String>,
    #[serde(default)]
    emotion: Option<String>,
}

fn parse_label<T: std::str::FromStr<Err = String>>(
    line: usize,
    value: Option<String>,
) -> Result<Option<T>, CorpusError> {
    value
        .map(|v| v.parse::<T>())
        .transpose()
        .map_err(|message| CorpusError::UnknownLabel { line, message })
}

/// Parses a JSON-lines corpus manifest from a string. Blank lines are skipped;
/// relative audio paths are kept as written.
pub fn parse_manifest(text: &str) -> Result<Corpus, CorpusError> {
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let dataset = raw
            .dataset
            .parse::<Dataset>()
            .map_err(|message| CorpusError::UnknownLabel {
                line: line_no,
                message,
            })?;
        let record = UtteranceRecord {
            id: raw.id,
            dataset,
            speaker_id: raw.speaker_id,
            audio_path: raw.audio_path,
            gender: parse_label(line_no, raw.gender)?,
            dialect: parse_label(line_no, raw.dialect)?,
            emotion: parse_label(line_no, raw.emotion)?,
        };
        check_record(line_no, &record)?;
        if !seen.insert(record.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        records.push(record);
    }
    Ok(Corpus { records })
}

/// Reads a JSON-lines corpus manifest. Relative audio paths are resolved
/// against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut corpus = parse_manifest(&text)?;
    if let Some(dir) = path.parent() {
        for r in &mut corpus.records {
            if r.audio_path.is_relative() {
                r.audio_path = dir.join(&r.audio_path);
            }
        }
    }
    Ok(corpus)
}

/// Serializes records as JSON lines, one record per line.
pub fn manifest_to_string(corpus: &Corpus) -> String {
    let mut out = String::new();
    for r in corpus.iter() {
        out.push_str(&serde_json::to_string(r).expect("records always serialize"));
        out.push('\n');
    }
    out
}
