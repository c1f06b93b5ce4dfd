//! Seeded synthetic data generators for tests, benchmarks and demos.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::corpus::{Corpus, Dataset, Dialect, Emotion, Gender, Task, UtteranceRecord};
use crate::gmm::Gmm;
use crate::ivector::{VectorDims, VectorKind, VectorPart};
use crate::nn::Matrix;

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}

/// Frames drawn from a diagonal GMM.
pub fn sample_gmm(gmm: &Gmm, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let k = pick(gmm.weights(), rng);
            gmm.means()[k]
                .iter()
                .zip(&gmm.variances()[k])
                .map(|(m, v)| m + v.sqrt() * normal(rng))
                .collect()
        })
        .collect()
}

fn pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    let mut u: f64 = rng.gen();
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Utterances generated from a total-variability model with known factors.
pub struct TvSample {
    pub ubm: Gmm,
    /// `K*D x R` loading matrix, row-major.
    pub t_true: Vec<Vec<f64>>,
    pub w_true: Vec<Vec<f64>>,
    pub utterances: Vec<Vec<Vec<f64>>>,
}

/// UBM with `k` well-separated unit-variance components in `d` dims; each
/// utterance shifts the component means by `T w` and draws `frames` frames.
pub fn tv_dataset(
    k: usize,
    d: usize,
    rank: usize,
    utterances: usize,
    frames: usize,
    noise: f64,
    seed: u64,
) -> TvSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d).iter().map(|x| 8.0 * x).collect()).collect();
    let ubm = Gmm::new(vec![1.0 / k as f64; k], means, vec![vec![noise * noise; d]; k])
        .expect("valid synthetic UBM");
    let t_true: Vec<Vec<f64>> = (0..k * d).map(|_| normal_vec(&mut rng, rank).iter().map(|x| 0.5 * x).collect()).collect();
    let mut w_true = Vec::with_capacity(utterances);
    let mut utts = Vec::with_capacity(utterances);
    for _ in 0..utterances {
        let w = normal_vec(&mut rng, rank);
        let shift: Vec<f64> = t_true
            .iter()
            .map(|row| row.iter().zip(&w).map(|(a, b)| a * b).sum())
            .collect();
        let fr = (0..frames)
            .map(|_| {
                let c = rng.gen_range(0..k);
                (0..d)
                    .map(|j| ubm.means()[c][j] + shift[c * d + j] + noise * normal(&mut rng))
                    .collect()
            })
            .collect();
        w_true.push(w);
        utts.push(fr);
    }
    TvSample {
        ubm,
        t_true,
        w_true,
        utterances: utts,
    }
}

/// One generated multi-task example.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub speaker: String,
    pub dataset: Dataset,
    pub labels: [Option<usize>; 3],
    /// Parts in canonical order `i, d, x`.
    pub parts: [Vec<f64>; 3],
}

impl SynthUtterance {
    pub fn label(&self, task: Task) -> Option<usize> {
        self.labels[task_slot(task)]
    }
}

pub fn task_slot(task: Task) -> usize {
    task.index()
}

/// Configuration for [`multitask_dataset`].
#[derive(Debug, Clone)]
pub struct MultiTaskSpec {
    pub latent_dim: usize,
    pub dims: [usize; 3],
    pub speakers: usize,
    pub utterances_per_speaker: usize,
    /// Distance scale of class means in the latent space.
    pub separation: f64,
    pub latent_noise: f64,
    pub observation_noise: f64,
    pub seed: u64,
}

impl Default for MultiTaskSpec {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            dims: [16, 256, 32],
            speakers: 240,
            utterances_per_speaker: 6,
            separation: 2.5,
            latent_noise: 0.3,
            observation_noise: 0.3,
            seed: 0,
        }
    }
}

/// Class-dependent Gaussians over a shared latent space, observed through three
/// random linear maps (the `i`, `d` and `x` parts).
///
/// Each speaker has a fixed gender and dialect; each utterance draws an emotion.
/// The latent vector is the sum of one class mean per task plus noise. Speakers
/// rotate through datasets with corpus-like label coverage: emotion corpora carry
/// gender and emotion, dialect corpora carry gender and dialect or dialect only.
pub fn multitask_dataset(spec: &MultiTaskSpec) -> Vec<SynthUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let class_means: Vec<Vec<Vec<f64>>> = Task::ALL
        .iter()
        .map(|t| {
            (0..t.num_classes())
                .map(|_| normal_vec(&mut rng, spec.latent_dim).iter().map(|x| spec.separation * x).collect())
                .collect()
        })
        .collect();
    let maps: Vec<Vec<Vec<f64>>> = spec
        .dims
        .iter()
        .map(|&dim| {
            let scale = 1.0 / (spec.latent_dim as f64).sqrt();
            (0..dim).map(|_| normal_vec(&mut rng, spec.latent_dim).iter().map(|x| scale * x).collect()).collect()
        })
        .collect();
    let layouts: [(Dataset, [bool; 3]); 4] = [
        (Dataset::KSUEmotion, [true, true, false]),
        (Dataset::SARA, [true, false, true]),
        (Dataset::QCRI, [false, false, true]),
        (Dataset::ANAD, [false, true, false]),
    ];
    let mut out = Vec::new();
    for s in 0..spec.speakers {
        let (dataset, present) = layouts[s % layouts.len()];
        let gender = rng.gen_range(0..2);
        let dialect = rng.gen_range(0..5);
        for u in 0..spec.utterances_per_speaker {
            let emotion = rng.gen_range(0..6);
            let classes = [gender, emotion, dialect];
            let mut z = normal_vec(&mut rng, spec.latent_dim);
            z.iter_mut().for_each(|v| *v *= spec.latent_noise);
            for t in 0..3 {
                for (zi, m) in z.iter_mut().zip(&class_means[t][classes[t]]) {
                    *zi += m;
                }
            }
            let parts: Vec<Vec<f64>> = maps
                .iter()
                .map(|m| {
                    m.iter()
                        .map(|row| {
                            row.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
                                + spec.observation_noise * normal(&mut rng)
                        })
                        .collect()
                })
                .collect();
            let labels = [0, 1, 2].map(|t| present[t].then_some(classes[t]));
            out.push(SynthUtterance {
                id: format!("spk{s:03}_utt{u:02}"),
                speaker: format!("spk{s:03}"),
                dataset,
                labels,
                parts: [parts[0].clone(), parts[1].clone(), parts[2].clone()],
            });
        }
    }
    out
}

impl MultiTaskSpec {
    pub fn vector_dims(&self) -> VectorDims {
        VectorDims {
            i: self.dims[0],
            d: self.dims[1],
            x: self.dims[2],
        }
    }
}

/// Corpus records for generated utterances; audio paths are placeholders.
pub fn synthetic_corpus(utts: &[SynthUtterance]) -> Corpus {
    let records = utts
        .iter()
        .map(|u| UtteranceRecord {
            id: u.id.clone(),
            dataset: u.dataset,
            speaker_id: u.speaker.clone(),
            audio_path: PathBuf::from(format!("{}.wav", u.id)),
            gender: u.label(Task::Gender).and_then(Gender::from_index),
            dialect: u.label(Task::Dialect).and_then(Dialect::from_index),
            emotion: u.label(Task::Emotion).and_then(Emotion::from_index),
        })
        .collect();
    Corpus::new(records).expect("generated records are valid")
}

/// `1 x D` inputs holding the parts of `kind`, concatenated in `i, d, x` order.
pub fn vector_inputs(utts: &[SynthUtterance], kind: VectorKind) -> BTreeMap<String, Matrix> {
    utts.iter()
        .map(|u| {
            let mut values = Vec::new();
            for part in kind.parts() {
                let slot = match part {
                    VectorPart::I => 0,
                    VectorPart::D => 1,
                    VectorPart::X => 2,
                };
                values.extend_from_slice(&u.parts[slot]);
            }
            (u.id.clone(), Matrix::from_row_slice(1, values.len(), &values))
        })
        .collect()
}

/// A sine tone at `freq` Hz, `seconds` long, 16 kHz.
pub fn tone(freq: f64, seconds: f64, amplitude: f64) -> Vec<f64> {
    let n = (seconds * 16_000.0).round() as usize;
    (0..n)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
        .collect()
}
