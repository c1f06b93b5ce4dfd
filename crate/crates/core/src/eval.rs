//! Confusion matrices, accuracy, macro/weighted F1 and per-dataset reports.
//!
//! F1 of a class is 0 whenever precision or recall has a zero denominator.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Dataset, Task};
use crate::model::{Model, ModelError};
use crate::train::Sample;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("label {label} outside {classes} classes")]
    UnknownLabel { label: usize, classes: usize },
    #[error("{golds} gold labels but {preds} predictions")]
    LengthMismatch { golds: usize, preds: usize },
    #[error("confusion matrix is empty")]
    Empty,
    #[error("no model predicts task {0}")]
    NoModelFor(Task),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Counts with rows indexed by gold class and columns by predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[&str]) -> Self {
        let n = classes.len();
        Self {
            classes: classes.iter().map(|c| c.to_string()).collect(),
            counts: vec![vec![0; n]; n],
        }
    }

    pub fn from_counts(classes: &[&str], counts: Vec<Vec<u64>>) -> Self {
        assert!(counts.len() == classes.len() && counts.iter().all(|r| r.len() == classes.len()));
        Self {
            classes: classes.iter().map(|c| c.to_string()).collect(),
            counts,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn add(&mut self, gold: usize, pred: usize) -> Result<(), EvalError> {
        let classes = self.num_classes();
        for label in [gold, pred] {
            if label >= classes {
                return Err(EvalError::UnknownLabel { label, classes });
            }
        }
        self.counts[gold][pred] += 1;
        Ok(())
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "merging matrices over different classes");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Gold-class totals.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    /// `2 tp / (gold + predicted)` per class, which equals the harmonic mean of
    /// precision and recall; 0 when the class is never seen nor predicted.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let n = self.num_classes();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c];
                let gold: u64 = self.counts[c].iter().sum();
                let pred: u64 = (0..n).map(|r| self.counts[r][c]).sum();
                if gold + pred == 0 {
                    0.0
                } else {
                    (2 * tp) as f64 / (gold + pred) as f64
                }
            })
            .collect()
    }
}

pub fn confusion_matrix(golds: &[usize], preds: &[usize], classes: &[&str]) -> Result<ConfusionMatrix, EvalError> {
    if golds.len() != preds.len() {
        return Err(EvalError::LengthMismatch {
            golds: golds.len(),
            preds: preds.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (g, p) in golds.iter().zip(preds) {
        cm.add(*g, *p)?;
    }
    Ok(cm)
}

/// Unweighted mean of per-class F1.
pub fn macro_f1(cm: &ConfusionMatrix) -> f64 {
    let f1 = cm.per_class_f1();
    if f1.is_empty() {
        return 0.0;
    }
    f1.iter().sum::<f64>() / f1.len() as f64
}

/// Per-class F1 weighted by gold support.
pub fn weighted_f1(cm: &ConfusionMatrix) -> f64 {
    let total = cm.total();
    if total == 0 {
        return 0.0;
    }
    cm.per_class_f1()
        .iter()
        .zip(cm.support())
        .map(|(f, s)| f * s as f64)
        .sum::<f64>()
        / total as f64
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(cm.trace() as f64 / total as f64)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Average {
    #[default]
    Macro,
    Weighted,
}

impl std::str::FromStr for Average {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(Average::Macro),
            "weighted" => Ok(Average::Weighted),
            _ => Err(format!("unknown average {s:?}; expected macro or weighted")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "STL")]
    Stl,
    #[serde(rename = "MTL")]
    Mtl,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stl => "STL",
            Mode::Mtl => "MTL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Dataset name, or `ALL` for the per-task aggregate.
    pub dataset: String,
    pub task: Task,
    pub mode: Mode,
    pub accuracy: f64,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weighted_f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub average: Average,
    /// One row per (dataset, task) cell with labelled samples.
    pub rows: Vec<ReportRow>,
    /// One row per task over all datasets, from the pooled confusion matrix.
    pub aggregates: Vec<ReportRow>,
    /// Unweighted mean of the per-task aggregate F1.
    pub overall_mean: f64,
    /// Per-task aggregate F1 weighted by task support.
    pub overall_pooled: f64,
    pub confusion: BTreeMap<Task, ConfusionMatrix>,
    pub notes: Vec<String>,
}

impl EvalReport {
    fn f1_of(&self, row: &ReportRow) -> f64 {
        match self.average {
            Average::Macro => row.macro_f1,
            Average::Weighted => row.weighted_f1.unwrap_or(row.macro_f1),
        }
    }

    pub fn aggregate(&self, task: Task) -> Option<&ReportRow> {
        self.aggregates.iter().find(|r| r.task == task)
    }

    pub fn to_tsv(&self) -> String {
        let weighted = self.average == Average::Weighted;
        let mut out = String::from("dataset\ttask\tmode\taccuracy\tmacro_f1");
        if weighted {
            out.push_str("\tweighted_f1");
        }
        out.push_str("\tsupport\n");
        for r in self.rows.iter().chain(&self.aggregates) {
            let _ = write!(out, "{}\t{}\t{}\t{:.6}\t{:.6}", r.dataset, r.task, r.mode.as_str(), r.accuracy, r.macro_f1);
            if weighted {
                let _ = write!(out, "\t{:.6}", r.weighted_f1.unwrap_or(0.0));
            }
            let _ = writeln!(out, "\t{}", r.support);
        }
        let _ = writeln!(out, "# overall_mean\t{:.6}", self.overall_mean);
        let _ = writeln!(out, "# overall_pooled\t{:.6}", self.overall_pooled);
        for n in &self.notes {
            let _ = writeln!(out, "# note\t{n}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn row(dataset: &str, task: Task, mode: Mode, cm: &ConfusionMatrix, average: Average) -> Result<ReportRow, EvalError> {
    Ok(ReportRow {
        dataset: dataset.to_string(),
        task,
        mode,
        accuracy: accuracy(cm)?,
        macro_f1: macro_f1(cm),
        weighted_f1: (average == Average::Weighted).then(|| weighted_f1(cm)),
        support: cm.total(),
    })
}

/// Scores `samples` per dataset and task. Each task is predicted by the first
/// model in `models` that has it active, so several single-task models can be
/// reported together.
pub fn per_dataset_report(
    models: &[&Model],
    samples: &[Sample],
    mode: Mode,
    average: Average,
) -> Result<EvalReport, EvalError> {
    let mut tasks: Vec<Task> = Vec::new();
    for t in Task::ALL {
        if models.iter().any(|m| m.active_tasks().contains(&t)) {
            tasks.push(t);
        }
    }
    let mut cells: BTreeMap<(Dataset, Task), ConfusionMatrix> = BTreeMap::new();
    for s in samples {
        for &task in &tasks {
            let Some(gold) = s.label(task) else { continue };
            let model = models
                .iter()
                .find(|m| m.active_tasks().contains(&task))
                .ok_or(EvalError::NoModelFor(task))?;
            let probs = model.predict_matrix(&s.input)?;
            let pred = argmax(&probs[&task]);
            cells
                .entry((s.dataset, task))
                .or_insert_with(|| ConfusionMatrix::new(&task.class_names()))
                .add(gold, pred)?;
        }
    }

    let mut rows = Vec::new();
    let mut pooled: BTreeMap<Task, ConfusionMatrix> = BTreeMap::new();
    let mut notes = Vec::new();
    for dataset in Dataset::ALL {
        for &task in &tasks {
            if let Some(cm) = cells.get(&(dataset, task)) {
                rows.push(row(dataset.as_str(), task, mode, cm, average)?);
                pooled
                    .entry(task)
                    .or_insert_with(|| ConfusionMatrix::new(&task.class_names()))
                    .merge(cm);
            }
        }
    }
    let mut aggregates = Vec::new();
    for &task in &tasks {
        match pooled.get(&task) {
            Some(cm) => aggregates.push(row("ALL", task, mode, cm, average)?),
            None => notes.push(format!("no labelled {task} samples")),
        }
    }
    let mut report = EvalReport {
        average,
        rows,
        aggregates,
        overall_mean: 0.0,
        overall_pooled: 0.0,
        confusion: pooled,
        notes,
    };
    if !report.aggregates.is_empty() {
        let f1: Vec<f64> = report.aggregates.iter().map(|r| report.f1_of(r)).collect();
        report.overall_mean = f1.iter().sum::<f64>() / f1.len() as f64;
        let support: u64 = report.aggregates.iter().map(|r| r.support).sum();
        report.overall_pooled = report
            .aggregates
            .iter()
            .zip(&f1)
            .map(|(r, f)| f * r.support as f64)
            .sum::<f64>()
            / support as f64;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let cm = ConfusionMatrix::from_counts(&["a", "b"], vec![vec![4, 1], vec![2, 3]]);
        let f1 = cm.per_class_f1();
        assert!((f1[0] - 8.0 / 11.0).abs() < 1e-12);
        assert!((f1[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((macro_f1(&cm) - 0.69697).abs() < 1e-5);
        assert!((accuracy(&cm).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_empty() {
        let cm = confusion_matrix(&[0, 1, 1, 0, 1], &[0, 1, 1, 0, 1], &["x", "y"]).unwrap();
        assert_eq!(cm.counts, vec![vec![2, 0], vec![0, 3]]);
        assert_eq!(macro_f1(&cm), 1.0);
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        let empty = confusion_matrix(&[], &[], &["x", "y"]).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(matches!(accuracy(&empty), Err(EvalError::Empty)));
    }

    #[test]
    fn absent_class_scores_zero() {
        let cm = confusion_matrix(&[0, 0, 1], &[0, 0, 1], &["a", "b", "c"]).unwrap();
        assert_eq!(cm.per_class_f1()[2], 0.0);
        assert!((macro_f1(&cm) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_labels_and_lengths() {
        assert!(matches!(
            confusion_matrix(&[0, 2], &[0, 1], &["a", "b"]),
            Err(EvalError::UnknownLabel { label: 2, .. })
        ));
        assert!(matches!(
            confusion_matrix(&[0], &[], &["a", "b"]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn weighted_uses_support() {
        let cm = ConfusionMatrix::from_counts(&["a", "b"], vec![vec![4, 1], vec![2, 3]]);
        let expected = (8.0 / 11.0 * 5.0 + 2.0 / 3.0 * 5.0) / 10.0;
        assert!((weighted_f1(&cm) - expected).abs() < 1e-15);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax(&[0.2, 0.5, 0.5, 0.1]), 1);
    }
}
