//! Diagonal-covariance Gaussian mixture trained by EM, used as the universal
//! background model for i-vector statistics.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cache::{Entry, KindCode, Payload};

/// Floor on component variances, relative to the per-dimension global variance.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-4;

/// Frames per parallel E-step chunk. Fixed so reductions are order-stable.
const CHUNK: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum GmmError {
    #[error("{frames} frames cannot seed {components} components")]
    Infeasible { frames: usize, components: usize },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("dimension mismatch: model has {expected} dims, frame has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty frame set")]
    Empty,
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl Gmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self, GmmError> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(GmmError::Invalid("component counts disagree".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().chain(&variances).any(|v| v.len() != d) {
            return Err(GmmError::Invalid("dimension counts disagree".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(GmmError::Invalid(format!("weights sum to {sum}")));
        }
        if variances.iter().flatten().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(GmmError::Invalid("variances must be positive".into()));
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return Err(GmmError::Invalid("non-finite mean".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Per-component `ln w_k - 0.5 * sum_d ln(2 pi var_kd)`.
    fn log_norms(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.variances)
            .map(|(w, var)| w.ln() - 0.5 * var.iter().map(|v| (2.0 * PI * v).ln()).sum::<f64>())
            .collect()
    }

    fn component_log_densities(&self, norms: &[f64], x: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            let q: f64 = x
                .iter()
                .zip(&self.means[k])
                .zip(&self.variances[k])
                .map(|((xi, m), v)| (xi - m) * (xi - m) / v)
                .sum();
            *o = norms[k] - 0.5 * q;
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GmmError> {
        if x.len() != self.dim() {
            return Err(GmmError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Serializes as one container entry: `K` rows of `[weight, means.., variances..]`.
    pub fn to_entry(&self) -> Entry {
        let d = self.dim();
        let mut data = Vec::with_capacity(self.num_components() * (1 + 2 * d));
        for k in 0..self.num_components() {
            data.push(self.weights[k]);
            data.extend_from_slice(&self.means[k]);
            data.extend_from_slice(&self.variances[k]);
        }
        Entry::new(KindCode::Gmm, self.num_components(), 1 + 2 * d, Payload::F64(data))
    }

    pub fn from_entry(entry: &Entry) -> Result<Self, GmmError> {
        let Payload::F64(data) = &entry.data else {
            return Err(GmmError::Invalid("GMM entries hold 64-bit floats".into()));
        };
        if entry.kind != KindCode::Gmm || entry.cols < 3 || (entry.cols - 1) % 2 != 0 {
            return Err(GmmError::Invalid(format!(
                "kind {:?} with {} columns is not a GMM",
                entry.kind, entry.cols
            )));
        }
        let d = (entry.cols - 1) / 2;
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut variances = Vec::new();
        for row in data.chunks_exact(entry.cols) {
            weights.push(row[0]);
            means.push(row[1..1 + d].to_vec());
            variances.push(row[1 + d..].to_vec());
        }
        Gmm::new(weights, means, variances)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Component responsibilities for one frame, computed in log space.
pub fn posteriors(gmm: &Gmm, frame: &[f64]) -> Result<Vec<f64>, GmmError> {
    gmm.check_dim(frame)?;
    let norms = gmm.log_norms();
    let mut lp = vec![0.0; gmm.num_components()];
    gmm.component_log_densities(&norms, frame, &mut lp);
    let total = log_sum_exp(&lp);
    Ok(lp.iter().map(|l| (l - total).exp()).collect())
}

/// Responsibilities for many frames, reusing the per-component normalizers.
pub(crate) fn posteriors_batch(gmm: &Gmm, frames: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, GmmError> {
    let norms = gmm.log_norms();
    frames
        .iter()
        .map(|x| {
            gmm.check_dim(x)?;
            let mut lp = vec![0.0; gmm.num_components()];
            gmm.component_log_densities(&norms, x, &mut lp);
            let total = log_sum_exp(&lp);
            Ok(lp.iter().map(|l| (l - total).exp()).collect())
        })
        .collect()
}

/// Mean per-frame log density.
pub fn log_likelihood(gmm: &Gmm, frames: &[Vec<f64>]) -> Result<f64, GmmError> {
    if frames.is_empty() {
        return Err(GmmError::Empty);
    }
    let norms = gmm.log_norms();
    let mut lp = vec![0.0; gmm.num_components()];
    let mut total = 0.0;
    for x in frames {
        gmm.check_dim(x)?;
        gmm.component_log_densities(&norms, x, &mut lp);
        total += log_sum_exp(&lp);
    }
    Ok(total / frames.len() as f64)
}

struct Accum {
    n: Vec<f64>,
    s: Vec<Vec<f64>>,
    ss: Vec<Vec<f64>>,
    ll: f64,
}

impl Accum {
    fn zeros(k: usize, d: usize) -> Self {
        Self {
            n: vec![0.0; k],
            s: vec![vec![0.0; d]; k],
            ss: vec![vec![0.0; d]; k],
            ll: 0.0,
        }
    }

    fn add(&mut self, other: &Accum) {
        self.ll += other.ll;
        for k in 0..self.n.len() {
            self.n[k] += other.n[k];
            for d in 0..self.s[k].len() {
                self.s[k][d] += other.s[k][d];
                self.ss[k][d] += other.ss[k][d];
            }
        }
    }
}

fn e_step(gmm: &Gmm, frames: &[Vec<f64>]) -> Accum {
    let (k, d) = (gmm.num_components(), gmm.dim());
    let norms = gmm.log_norms();
    let partials: Vec<Accum> = frames
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = Accum::zeros(k, d);
            let mut lp = vec![0.0; k];
            for x in chunk {
                gmm.component_log_densities(&norms, x, &mut lp);
                let total = log_sum_exp(&lp);
                acc.ll += total;
                for c in 0..k {
                    let g = (lp[c] - total).exp();
                    if g == 0.0 {
                        continue;
                    }
                    acc.n[c] += g;
                    for (j, xi) in x.iter().enumerate() {
                        acc.s[c][j] += g * xi;
                        acc.ss[c][j] += g * xi * xi;
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = Accum::zeros(k, d);
    for p in &partials {
        total.add(p);
    }
    total
}

fn validate_frames(frames: &[Vec<f64>]) -> Result<usize, GmmError> {
    let d = frames.first().map(Vec::len).ok_or(GmmError::Empty)?;
    if d == 0 {
        return Err(GmmError::Data("zero-dimensional frames".into()));
    }
    for (i, f) in frames.iter().enumerate() {
        if f.len() != d {
            return Err(GmmError::DimensionMismatch {
                expected: d,
                got: f.len(),
            });
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(GmmError::Data(format!("non-finite value in frame {i}")));
        }
    }
    Ok(d)
}

fn global_variance(frames: &[Vec<f64>], d: usize) -> Vec<f64> {
    let n = frames.len() as f64;
    let mut mean = vec![0.0; d];
    for f in frames {
        for j in 0..d {
            mean[j] += f[j] / n;
        }
    }
    let mut var = vec![0.0; d];
    for f in frames {
        for j in 0..d {
            var[j] += (f[j] - mean[j]).powi(2) / n;
        }
    }
    var
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by one hard-assignment pass to set weights and variances.
fn init(frames: &[Vec<f64>], k: usize, floor: &[f64], global_var: &[f64], rng: &mut ChaCha8Rng) -> Gmm {
    let d = floor.len();
    let mut centers: Vec<Vec<f64>> = vec![frames[rng.gen_range(0..frames.len())].clone()];
    let mut dist: Vec<f64> = frames.iter().map(|f| sq_dist(f, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = frames.len() - 1;
            for (i, w) in dist.iter().enumerate() {
                if target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..frames.len())
        };
        centers.push(frames[next].clone());
        let c = centers.last().expect("just pushed");
        for (dd, f) in dist.iter_mut().zip(frames) {
            *dd = dd.min(sq_dist(f, c));
        }
    }

    let mut counts = vec![0usize; k];
    let mut sums = vec![vec![0.0; d]; k];
    let mut sq = vec![vec![0.0; d]; k];
    for f in frames {
        let c = (0..k)
            .min_by(|&a, &b| sq_dist(f, &centers[a]).total_cmp(&sq_dist(f, &centers[b])))
            .expect("k >= 1");
        counts[c] += 1;
        for j in 0..d {
            sums[c][j] += f[j];
            sq[c][j] += f[j] * f[j];
        }
    }
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        if counts[c] == 0 {
            weights.push(0.5);
            means.push(centers[c].clone());
            variances.push(global_var.iter().zip(floor).map(|(g, f)| g.max(*f)).collect());
            continue;
        }
        let m = counts[c] as f64;
        let mean: Vec<f64> = sums[c].iter().map(|s| s / m).collect();
        let var: Vec<f64> = (0..d)
            .map(|j| {
                let v = sq[c][j] / m - mean[j] * mean[j];
                if counts[c] > 1 { v.max(floor[j]) } else { global_var[j].max(floor[j]) }
            })
            .collect();
        weights.push(m);
        means.push(mean);
        variances.push(var);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Gmm {
        weights,
        means,
        variances,
    }
}

fn m_step(prev: &Gmm, acc: &Accum, n_frames: usize, floor: &[f64]) -> Gmm {
    let n = n_frames as f64;
    let k = prev.num_components();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for c in 0..k {
        let nc = acc.n[c];
        weights.push(nc / n);
        if nc < 1e-10 * n {
            means.push(prev.means[c].clone());
            variances.push(prev.variances[c].clone());
            continue;
        }
        let mean: Vec<f64> = acc.s[c].iter().map(|s| s / nc).collect();
        let var = (0..mean.len())
            .map(|j| (acc.ss[c][j] / nc - mean[j] * mean[j]).max(floor[j]))
            .collect();
        means.push(mean);
        variances.push(var);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Gmm {
        weights,
        means,
        variances,
    }
}

/// Fits a `k`-component GMM with `iters` EM iterations.
pub fn fit_gmm(frames: &[Vec<f64>], k: usize, iters: usize, seed: u64) -> Result<Gmm, GmmError> {
    fit_gmm_traced(frames, k, iters, seed).map(|(g, _)| g)
}

/// Like [`fit_gmm`], also returning the mean log-likelihood of the data under
/// the model entering each iteration followed by that of the final model.
pub fn fit_gmm_traced(
    frames: &[Vec<f64>],
    k: usize,
    iters: usize,
    seed: u64,
) -> Result<(Gmm, Vec<f64>), GmmError> {
    let d = validate_frames(frames)?;
    if k == 0 || frames.len() < k {
        return Err(GmmError::Infeasible {
            frames: frames.len(),
            components: k,
        });
    }
    let global_var = global_variance(frames, d);
    let floor: Vec<f64> = global_var
        .iter()
        .map(|v| (v * VARIANCE_FLOOR_RATIO).max(f64::MIN_POSITIVE))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gmm = init(frames, k, &floor, &global_var, &mut rng);
    let mut trace = Vec::with_capacity(iters + 1);
    for _ in 0..iters {
        let acc = e_step(&gmm, frames);
        trace.push(acc.ll / frames.len() as f64);
        gmm = m_step(&gmm, &acc, frames.len(), &floor);
    }
    trace.push(e_step(&gmm, frames).ll / frames.len() as f64);
    Ok((gmm, trace))
}
