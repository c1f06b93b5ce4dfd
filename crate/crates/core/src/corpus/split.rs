//! Speaker-disjoint train/dev/test splitting.
//!
//! Every (dataset, task, class) cell should be divided between the sets in the
//! target ratios, but all utterances of one speaker must land in the same set.
//! The assignment minimizes
//!
//! ```text
//! sum over cells c and sets s of (count[c][s] / total[c] - ratio[s])^2
//! ```
//!
//! with a greedy pass (largest speakers first) followed by hill climbing over
//! single-speaker moves and pairwise speaker swaps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Dataset, SetName, Task};

const IMPROVEMENT_EPS: f64 = 1e-12;

/// Speaker-disjoint assignment of every utterance to a set.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub assignment: BTreeMap<String, SetName>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitManifest {
    pub fn set_of(&self, id: &str) -> Option<SetName> {
        self.assignment.get(id).copied()
    }

    pub fn ids_in(&self, set: SetName) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, s)| **s == set)
            .map(|(id, _)| id.as_str())
    }
}

type Cell = (Dataset, Task, usize);

fn check_ratios(ratios: [f64; 3]) -> Result<(), CorpusError> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CorpusError::InvalidSplit(format!(
            "ratios {ratios:?} must lie in [0, 1]"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(CorpusError::InvalidSplit(format!(
            "ratios {ratios:?} sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Per-speaker cell counts and the bookkeeping needed to score assignments.
struct Problem {
    speakers: Vec<String>,
    /// (cell index, utterance count) pairs per speaker.
    speaker_cells: Vec<Vec<(usize, usize)>>,
    speaker_sizes: Vec<usize>,
    cell_totals: Vec<usize>,
    ratios: [f64; 3],
}

struct State<'a> {
    problem: &'a Problem,
    counts: Vec<[usize; 3]>,
    set_of: Vec<Option<usize>>,
}

impl Problem {
    fn build(corpus: &Corpus, ratios: [f64; 3]) -> Self {
        let mut cell_index: BTreeMap<Cell, usize> = BTreeMap::new();
        for r in corpus.iter() {
            for task in Task::ALL {
                if let Some(c) = r.label(task) {
                    cell_index.insert((r.dataset, task, c), 0);
                }
            }
        }
        for (i, v) in cell_index.values_mut().enumerate() {
            *v = i;
        }
        let mut per_speaker: BTreeMap<&str, (usize, BTreeMap<usize, usize>)> = BTreeMap::new();
        let mut cell_totals = vec![0usize; cell_index.len()];
        for r in corpus.iter() {
            let entry = per_speaker.entry(r.speaker_id.as_str()).or_default();
            entry.0 += 1;
            for task in Task::ALL {
                if let Some(c) = r.label(task) {
                    let ci = cell_index[&(r.dataset, task, c)];
                    *entry.1.entry(ci).or_default() += 1;
                    cell_totals[ci] += 1;
                }
            }
        }
        let mut speakers = Vec::new();
        let mut speaker_cells = Vec::new();
        let mut speaker_sizes = Vec::new();
        for (s, (size, cells)) in per_speaker {
            speakers.push(s.to_string());
            speaker_sizes.push(size);
            speaker_cells.push(cells.into_iter().collect());
        }
        Self {
            speakers,
            speaker_cells,
            speaker_sizes,
            cell_totals,
            ratios,
        }
    }
}

impl<'a> State<'a> {
    fn new(problem: &'a Problem) -> Self {
        Self {
            problem,
            counts: vec![[0; 3]; problem.cell_totals.len()],
            set_of: vec![None; problem.speakers.len()],
        }
    }

    fn term(&self, cell: usize, set: usize, count: usize) -> f64 {
        let total = self.problem.cell_totals[cell] as f64;
        let d = count as f64 / total - self.problem.ratios[set];
        d * d
    }

    fn objective(&self) -> f64 {
        self.counts
            .iter()
            .enumerate()
            .map(|(c, row)| (0..3).map(|s| self.term(c, s, row[s])).sum::<f64>())
            .sum()
    }

    /// Objective change from moving `speaker` out of `from` (if any) into `to`.
    fn move_delta(&self, speaker: usize, from: Option<usize>, to: usize) -> f64 {
        let mut delta = 0.0;
        for &(c, m) in &self.problem.speaker_cells[speaker] {
            let row = self.counts[c];
            if let Some(f) = from {
                delta += self.term(c, f, row[f] - m) - self.term(c, f, row[f]);
            }
            delta += self.term(c, to, row[to] + m) - self.term(c, to, row[to]);
        }
        delta
    }

    fn place(&mut self, speaker: usize, to: usize) {
        if let Some(from) = self.set_of[speaker] {
            for &(c, m) in &self.problem.speaker_cells[speaker] {
                self.counts[c][from] -= m;
            }
        }
        for &(c, m) in &self.problem.speaker_cells[speaker] {
            self.counts[c][to] += m;
        }
        self.set_of[speaker] = Some(to);
    }

    fn best_move(&self, speaker: usize) -> Option<(usize, f64)> {
        let from = self.set_of[speaker];
        let mut best: Option<(usize, f64)> = None;
        for to in 0..3 {
            if Some(to) == from {
                continue;
            }
            let d = self.move_delta(speaker, from, to);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((to, d));
            }
        }
        best
    }

    fn swap_delta(&mut self, a: usize, b: usize) -> f64 {
        let sa = self.set_of[a].expect("assigned");
        let sb = self.set_of[b].expect("assigned");
        let first = self.move_delta(a, Some(sa), sb);
        self.place(a, sb);
        let second = self.move_delta(b, Some(sb), sa);
        self.place(a, sa);
        first + second
    }
}

/// Sum of squared proportion deviations over (dataset, task, class, set) cells.
pub fn split_objective(corpus: &Corpus, manifest: &SplitManifest) -> Result<f64, CorpusError> {
    let problem = Problem::build(corpus, manifest.ratios);
    let mut state = State::new(&problem);
    let speaker_set = speaker_sets(corpus, manifest)?;
    for (i, s) in problem.speakers.iter().enumerate() {
        match speaker_set.get(s.as_str()) {
            Some(sets) if sets.len() == 1 => {
                let set = *sets.iter().next().expect("non-empty");
                state.place(i, set.index());
            }
            _ => {
                return Err(CorpusError::InvalidSplit(format!(
                    "speaker {s:?} is not assigned to exactly one set"
                )))
            }
        }
    }
    Ok(state.objective())
}

/// Splits `corpus` into train/dev/test with no speaker shared between sets.
pub fn split_speaker_disjoint(
    corpus: &Corpus,
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitManifest, CorpusError> {
    check_ratios(ratios)?;
    let problem = Problem::build(corpus, ratios);
    if problem.speakers.len() < 3 {
        return Err(CorpusError::Infeasible(format!(
            "{} speaker(s); at least 3 are needed for three disjoint sets",
            problem.speakers.len()
        )));
    }

    let mut order: Vec<usize> = (0..problem.speakers.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| problem.speaker_sizes[b].cmp(&problem.speaker_sizes[a]));

    let mut state = State::new(&problem);
    for &sp in &order {
        let (to, _) = state.best_move(sp).expect("three candidate sets");
        state.place(sp, to);
    }

    loop {
        let mut improved = false;
        for &sp in &order {
            if let Some((to, d)) = state.best_move(sp) {
                if d < -IMPROVEMENT_EPS {
                    state.place(sp, to);
                    improved = true;
                }
            }
        }
        for (i, &a) in order.iter().enumerate() {
            for &b in &order[i + 1..] {
                if state.set_of[a] == state.set_of[b] {
                    continue;
                }
                if state.swap_delta(a, b) < -IMPROVEMENT_EPS {
                    let (sa, sb) = (state.set_of[a].unwrap(), state.set_of[b].unwrap());
                    state.place(a, sb);
                    state.place(b, sa);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }

    let speaker_index: BTreeMap<&str, usize> = problem
        .speakers
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let assignment = corpus
        .iter()
        .map(|r| {
            let set = state.set_of[speaker_index[r.speaker_id.as_str()]].expect("assigned");
            (r.id.clone(), SetName::ALL[set])
        })
        .collect();
    Ok(SplitManifest {
        assignment,
        seed,
        ratios,
    })
}

fn speaker_sets<'c>(
    corpus: &'c Corpus,
    manifest: &SplitManifest,
) -> Result<BTreeMap<&'c str, std::collections::BTreeSet<SetName>>, CorpusError> {
    let mut out: BTreeMap<&str, std::collections::BTreeSet<SetName>> = BTreeMap::new();
    for r in corpus.iter() {
        let set = manifest.set_of(&r.id).ok_or_else(|| {
            CorpusError::InvalidSplit(format!("utterance {:?} is not covered by the split", r.id))
        })?;
        out.entry(r.speaker_id.as_str()).or_default().insert(set);
    }
    Ok(out)
}

/// Per-set counts of one (dataset, task, class) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCounts {
    pub dataset: Dataset,
    pub task: Task,
    pub class: String,
    pub counts: [usize; 3],
}

/// Class distribution per set, in the layout of a per-dataset distribution table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub cells: Vec<CellCounts>,
    pub set_totals: [usize; 3],
    pub ratios: [f64; 3],
    /// Achieved minus target share of all utterances per set, in percentage points.
    pub total_deviation_points: [f64; 3],
    /// Largest |achieved - target| proportion over all cells and sets.
    pub max_abs_deviation: f64,
    pub objective: f64,
    pub speaker_overlap: bool,
    pub overlapping_speakers: Vec<String>,
}

/// Achieved minus target share per set, in percentage points.
pub fn proportion_deviation_points(counts: [usize; 3], ratios: [f64; 3]) -> [f64; 3] {
    let total: usize = counts.iter().sum();
    let mut out = [0.0; 3];
    if total == 0 {
        return out;
    }
    for s in 0..3 {
        out[s] = 100.0 * (counts[s] as f64 / total as f64 - ratios[s]);
    }
    out
}

/// Tabulates a split and checks it for speaker overlap.
pub fn validate_split(corpus: &Corpus, manifest: &SplitManifest) -> Result<SplitReport, CorpusError> {
    for id in manifest.assignment.keys() {
        if corpus.get(id).is_none() {
            return Err(CorpusError::InvalidSplit(format!(
                "split names utterance {id:?} which is not in the corpus"
            )));
        }
    }
    let speaker_set = speaker_sets(corpus, manifest)?;
    let overlapping_speakers: Vec<String> = speaker_set
        .iter()
        .filter(|(_, sets)| sets.len() > 1)
        .map(|(s, _)| s.to_string())
        .collect();

    let mut cells: BTreeMap<Cell, [usize; 3]> = BTreeMap::new();
    let mut set_totals = [0usize; 3];
    for r in corpus.iter() {
        let set = manifest.set_of(&r.id).expect("coverage checked").index();
        set_totals[set] += 1;
        for task in Task::ALL {
            if let Some(c) = r.label(task) {
                cells.entry((r.dataset, task, c)).or_default()[set] += 1;
            }
        }
    }

    let ratios = manifest.ratios;
    let mut max_abs_deviation: f64 = 0.0;
    let mut objective = 0.0;
    for counts in cells.values() {
        let total: usize = counts.iter().sum();
        for s in 0..3 {
            let d = counts[s] as f64 / total as f64 - ratios[s];
            max_abs_deviation = max_abs_deviation.max(d.abs());
            objective += d * d;
        }
    }

    Ok(SplitReport {
        cells: cells
            .into_iter()
            .map(|((dataset, task, c), counts)| CellCounts {
                dataset,
                task,
                class: task.class_names()[c].to_string(),
                counts,
            })
            .collect(),
        set_totals,
        ratios,
        total_deviation_points: proportion_deviation_points(set_totals, ratios),
        max_abs_deviation,
        objective,
        speaker_overlap: !overlapping_speakers.is_empty(),
        overlapping_speakers,
    })
}

impl SplitReport {
    /// Human-readable table: one line per cell with train/dev/test counts.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "dataset\ttask\tclass\ttrain\tdev\ttest");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                c.dataset, c.task, c.class, c.counts[0], c.counts[1], c.counts[2]
            );
        }
        let t = self.set_totals;
        let d = self.total_deviation_points;
        let _ = writeln!(out, "total\t\t\t{}\t{}\t{}", t[0], t[1], t[2]);
        let _ = writeln!(out, "deviation(pts)\t\t\t{:+.2}\t{:+.2}\t{:+.2}", d[0], d[1], d[2]);
        let _ = writeln!(out, "max cell deviation\t{:.4}", self.max_abs_deviation);
        let _ = writeln!(out, "speaker overlap\t{}", self.speaker_overlap);
        out
    }
}

#[derive(Serialize, Deserialize)]
struct SplitHeader {
    seed: u64,
    ratios: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SplitLine {
    id: String,
    set: SetName,
}

pub fn split_manifest_to_string(manifest: &SplitManifest) -> String {
    let mut out = serde_json::to_string(&SplitHeader {
        seed: manifest.seed,
        ratios: manifest.ratios,
    })
    .expect("header serializes");
    out.push('\n');
    for (id, set) in &manifest.assignment {
        out.push_str(
            &serde_json::to_string(&SplitLine {
                id: id.clone(),
                set: *set,
            })
            .expect("line serializes"),
        );
        out.push('\n');
    }
    out
}

/// Writes the split as JSON lines: a `{seed, ratios}` header then one `{id, set}` per line.
pub fn write_split_manifest(path: impl AsRef<Path>, manifest: &SplitManifest) -> Result<(), CorpusError> {
    let path = path.as_ref();
    std::fs::write(path, split_manifest_to_string(manifest)).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_split_manifest(path: impl AsRef<Path>) -> Result<SplitManifest, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_split_manifest(&text)
}

pub fn parse_split_manifest(text: &str) -> Result<SplitManifest, CorpusError> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or(CorpusError::Parse {
        line: 1,
        message: "missing split header".into(),
    })?;
    let header: SplitHeader = serde_json::from_str(first).map_err(|e| CorpusError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let mut assignment = BTreeMap::new();
    for (i, l) in lines {
        let line: SplitLine = serde_json::from_str(l).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if assignment.insert(line.id.clone(), line.set).is_some() {
            return Err(CorpusError::DuplicateId {
                line: i + 1,
                id: line.id,
            });
        }
    }
    Ok(SplitManifest {
        assignment,
        seed: header.seed,
        ratios: header.ratios,
    })
}
