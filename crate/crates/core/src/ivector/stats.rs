use super::IvectorError;
use crate::gmm::{posteriors_batch, Gmm};

/// Zeroth- and first-order Baum-Welch statistics of one utterance. First-order
/// stats are centered on the UBM means.
#[derive(Debug, Clone, PartialEq)]
pub struct BwStats {
    /// Soft frame counts per component (`K`).
    pub n: Vec<f64>,
    /// Centered first-order sums (`K x D`).
    pub f: Vec<Vec<f64>>,
}

impl BwStats {
    pub fn num_components(&self) -> usize {
        self.n.len()
    }

    pub fn dim(&self) -> usize {
        self.f.first().map_or(0, Vec::len)
    }

    /// The centered first-order stats flattened into a `K*D` supervector.
    pub fn supervector(&self) -> Vec<f64> {
        self.f.iter().flatten().copied().collect()
    }
}

/// `N_k = sum_t g_k(x_t)` and `F_k = sum_t g_k(x_t) (x_t - mu_k)`.
pub fn baum_welch_stats(gmm: &Gmm, frames: &[Vec<f64>]) -> Result<BwStats, IvectorError> {
    if frames.is_empty() {
        return Err(IvectorError::EmptyFrames);
    }
    let (k, d) = (gmm.num_components(), gmm.dim());
    let post = posteriors_batch(gmm, frames)?;
    let mut n = vec![0.0; k];
    let mut f = vec![vec![0.0; d]; k];
    for (x, g) in frames.iter().zip(&post) {
        for c in 0..k {
            n[c] += g[c];
            for j in 0..d {
                f[c][j] += g[c] * (x[j] - gmm.means()[c][j]);
            }
        }
    }
    Ok(BwStats { n, f })
}
