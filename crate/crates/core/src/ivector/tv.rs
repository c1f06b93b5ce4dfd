//! Total-variability training and i-vector extraction.
//!
//! The centered first-order stats of an utterance are modeled as
//! `F ~ N T w` with `w ~ N(0, I)`. Given `T`, the posterior of `w` has
//! precision `L = I + sum_k N_k T_k' S_k^-1 T_k` and mean `L^-1 T' S^-1 F`,
//! where `S_k` are the (fixed) UBM covariances. EM alternates those posteriors
//! with a per-component least-squares update of the rows of `T`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BwStats, FixedVector, IvectorError, VectorKind};
use crate::cache::{Entry, KindCode, Payload};
use crate::gmm::Gmm;
use crate::synth::normal;

/// Utterances per parallel E-step batch; accumulation stays in input order.
const BATCH: usize = 64;

/// Total-variability loading matrix, `K*D` rows by `R` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TMatrix {
    t: DMatrix<f64>,
    dim: usize,
}

impl TMatrix {
    pub fn new(t: DMatrix<f64>, dim: usize) -> Result<Self, IvectorError> {
        if dim == 0 || t.nrows() % dim != 0 || t.ncols() == 0 {
            return Err(IvectorError::Shape(format!(
                "{}x{} loading matrix does not split into {dim}-dim blocks",
                t.nrows(),
                t.ncols()
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(IvectorError::Shape("non-finite loading".into()));
        }
        Ok(Self { t, dim })
    }

    pub fn rank(&self) -> usize {
        self.t.ncols()
    }

    pub fn num_components(&self) -> usize {
        self.t.nrows() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.t
    }

    fn block(&self, k: usize) -> DMatrix<f64> {
        self.t.rows(k * self.dim, self.dim).into_owned()
    }

    pub fn to_entry(&self) -> Entry {
        let (rows, cols) = self.t.shape();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(self.t.row(r).iter());
        }
        Entry::new(KindCode::Tensor, rows, cols, Payload::F64(data))
    }

    pub fn from_entry(entry: &Entry, dim: usize) -> Result<Self, IvectorError> {
        let Payload::F64(data) = &entry.data else {
            return Err(IvectorError::Shape("loading matrix must hold 64-bit floats".into()));
        };
        TMatrix::new(DMatrix::from_row_slice(entry.rows, entry.cols, data), dim)
    }
}

struct Precomputed {
    /// `T_k' S_k^-1`, `R x D` per component.
    weighted: Vec<DMatrix<f64>>,
    /// `T_k' S_k^-1 T_k`, `R x R` per component.
    gram: Vec<DMatrix<f64>>,
}

fn precompute(t: &TMatrix, gmm: &Gmm) -> Precomputed {
    let mut weighted = Vec::with_capacity(t.num_components());
    let mut gram = Vec::with_capacity(t.num_components());
    for k in 0..t.num_components() {
        let tk = t.block(k);
        let mut scaled = tk.clone();
        for (j, var) in gmm.variances()[k].iter().enumerate() {
            scaled.row_mut(j).scale_mut(1.0 / var);
        }
        gram.push(tk.transpose() * &scaled);
        weighted.push(scaled.transpose());
    }
    Precomputed { weighted, gram }
}

struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    objective: f64,
}

fn posterior(pre: &Precomputed, stats: &BwStats, rank: usize, with_cov: bool) -> Posterior {
    let mut precision = DMatrix::<f64>::identity(rank, rank);
    let mut linear = DVector::<f64>::zeros(rank);
    for (k, n) in stats.n.iter().enumerate() {
        if *n != 0.0 {
            precision += &pre.gram[k] * *n;
        }
        linear += &pre.weighted[k] * DVector::from_column_slice(&stats.f[k]);
    }
    // I + PSD is positive definite
    let chol = precision.cholesky().expect("posterior precision is positive definite");
    let mean = chol.solve(&linear);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let objective = 0.5 * linear.dot(&mean) - 0.5 * log_det;
    let cov = if with_cov {
        chol.inverse()
    } else {
        DMatrix::zeros(0, 0)
    };
    Posterior {
        mean,
        cov,
        objective,
    }
}

fn check_stats(t: &TMatrix, gmm: &Gmm, stats: &BwStats) -> Result<(), IvectorError> {
    if gmm.num_components() != t.num_components() || gmm.dim() != t.dim() {
        return Err(IvectorError::Shape(format!(
            "UBM is {}x{}, loading matrix expects {}x{}",
            gmm.num_components(),
            gmm.dim(),
            t.num_components(),
            t.dim()
        )));
    }
    if stats.n.len() != t.num_components()
        || stats.f.len() != t.num_components()
        || stats.f.iter().any(|f| f.len() != t.dim())
    {
        return Err(IvectorError::Shape(format!(
            "statistics do not match {} components of dim {}",
            t.num_components(),
            t.dim()
        )));
    }
    Ok(())
}

/// Posterior mean of the latent factor, in full precision.
pub fn extract_ivector_raw(t: &TMatrix, gmm: &Gmm, stats: &BwStats) -> Result<Vec<f64>, IvectorError> {
    check_stats(t, gmm, stats)?;
    let pre = precompute(t, gmm);
    Ok(posterior(&pre, stats, t.rank(), false).mean.iter().copied().collect())
}

pub fn extract_ivector(t: &TMatrix, gmm: &Gmm, stats: &BwStats) -> Result<FixedVector, IvectorError> {
    let raw = extract_ivector_raw(t, gmm, stats)?;
    Ok(FixedVector {
        kind: VectorKind::I,
        values: raw.iter().map(|&v| v as f32).collect(),
    })
}

/// Scales a vector to unit Euclidean norm; zero vectors are returned unchanged.
pub fn length_normalize(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / norm).collect()
}

/// Marginal log-likelihood of the stats under `t`, up to terms constant in `t`:
/// `sum_u 0.5 b_u' L_u^-1 b_u - 0.5 ln|L_u|`.
pub fn tv_objective(t: &TMatrix, gmm: &Gmm, stats: &[BwStats]) -> Result<f64, IvectorError> {
    for s in stats {
        check_stats(t, gmm, s)?;
    }
    let pre = precompute(t, gmm);
    Ok(stats
        .par_iter()
        .map(|s| posterior(&pre, s, t.rank(), false).objective)
        .collect::<Vec<_>>()
        .iter()
        .sum())
}

pub fn train_total_variability(
    stats: &[BwStats],
    gmm: &Gmm,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<TMatrix, IvectorError> {
    train_total_variability_traced(stats, gmm, rank, iters, seed).map(|(t, _)| t)
}

/// Like [`train_total_variability`], also returning the objective of the
/// initial matrix and after every iteration.
pub fn train_total_variability_traced(
    stats: &[BwStats],
    gmm: &Gmm,
    rank: usize,
    iters: usize,
    seed: u64,
) -> Result<(TMatrix, Vec<f64>), IvectorError> {
    let (k, d) = (gmm.num_components(), gmm.dim());
    if stats.len() < 2 {
        return Err(IvectorError::Invalid(format!(
            "{} utterance(s); at least 2 are needed",
            stats.len()
        )));
    }
    if rank == 0 || rank > k * d {
        return Err(IvectorError::Invalid(format!(
            "rank {rank} outside 1..={}",
            k * d
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = DMatrix::<f64>::zeros(k * d, rank);
    for c in 0..k {
        for j in 0..d {
            let sd = gmm.variances()[c][j].sqrt();
            for r in 0..rank {
                init[(c * d + j, r)] = 0.1 * sd * normal(&mut rng);
            }
        }
    }
    let mut t = TMatrix::new(init, d)?;
    for s in stats {
        check_stats(&t, gmm, s)?;
    }

    let mut trace = Vec::with_capacity(iters + 1);
    for iteration in 0..iters {
        let pre = precompute(&t, gmm);
        let mut acc_a = vec![DMatrix::<f64>::zeros(rank, rank); k];
        let mut acc_c = vec![DMatrix::<f64>::zeros(d, rank); k];
        let mut objective = 0.0;
        for batch in stats.chunks(BATCH) {
            let posts: Vec<Posterior> = batch
                .par_iter()
                .map(|s| posterior(&pre, s, rank, true))
                .collect();
            for (s, p) in batch.iter().zip(posts) {
                objective += p.objective;
                let second = &p.cov + &p.mean * p.mean.transpose();
                for c in 0..k {
                    if s.n[c] != 0.0 {
                        acc_a[c] += &second * s.n[c];
                    }
                    acc_c[c] += DVector::from_column_slice(&s.f[c]) * p.mean.transpose();
                }
            }
        }
        trace.push(objective);

        let mut next = DMatrix::<f64>::zeros(k * d, rank);
        for c in 0..k {
            let chol = acc_a[c].clone().cholesky().ok_or(IvectorError::Singular {
                iteration,
                component: c,
            })?;
            // T_c = C_c A_c^-1, i.e. T_c' = A_c^-1 C_c'
            let block = chol.solve(&acc_c[c].transpose()).transpose();
            next.rows_mut(c * d, d).copy_from(&block);
        }
        t = TMatrix::new(next, d).map_err(|_| IvectorError::Singular {
            iteration,
            component: usize::MAX,
        })?;
    }
    trace.push(tv_objective(&t, gmm, stats)?);
    Ok((t, trace))
}
