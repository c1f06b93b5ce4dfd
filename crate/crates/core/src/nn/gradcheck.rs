//! Finite-difference verification of [`Stack::backward`].
//!
//! The scalar loss is `sum(output * R)` for a fixed random `R`, evaluated in
//! training mode with a fixed dropout seed so masks are part of what is
//! checked. Numeric derivatives use the five-point central stencil. Entries
//! whose perturbation flips any ReLU on/off are skipped, since the loss is not
//! differentiable across that kink.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{LayerSpec, Matrix, NnError, ParamStore, Stack};
use crate::synth::normal;

/// Entries checked per tensor when a tensor is larger than this; chosen by seed.
pub const DEFAULT_SAMPLE_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Tensor and entry index of the largest error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

/// Maximum relative error `|ga - gn| / max(1e-8, |ga| + |gn|)` over all
/// parameters and the input, sampling large tensors.
pub fn grad_check(layers: &[LayerSpec], input_shape: (usize, usize), eps: f64, seed: u64) -> Result<f64, NnError> {
    Ok(grad_check_report(layers, input_shape, eps, seed, DEFAULT_SAMPLE_CAP)?.max_rel_error)
}

pub fn grad_check_report(
    layers: &[LayerSpec],
    input_shape: (usize, usize),
    eps: f64,
    seed: u64,
    sample_cap: usize,
) -> Result<GradCheckReport, NnError> {
    let stack = Stack::new("check.", layers.to_vec(), input_shape.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    stack.init_params(&mut params, &mut rng);
    let input = Matrix::from_fn(input_shape.0, input_shape.1, |_, _| normal(&mut rng));
    let drop_seed = seed ^ 0x5eed;

    let (out, tape) = stack.forward(&params, &input, true, drop_seed)?;
    let proj = Matrix::from_fn(out.nrows(), out.ncols(), |_, _| normal(&mut rng));
    let base_sig = tape.relu_signature(&stack);
    let (grads, dinput) = stack.backward(&params, &tape, &proj)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped_kinks: 0,
    };
    let mut targets: Vec<(String, usize)> = stack
        .param_shapes()
        .into_iter()
        .map(|(name, (r, c))| (name, r * c))
        .collect();
    targets.push(("input".to_string(), input.len()));

    for (name, len) in targets {
        let analytic = if name == "input" { &dinput } else { &grads[&name] };
        let entries: Vec<usize> = if len <= sample_cap {
            (0..len).collect()
        } else {
            let mut picked = sample(&mut rng, len, sample_cap).into_vec();
            picked.sort_unstable();
            picked
        };
        let mut p = params.clone();
        let mut x = input.clone();
        for idx in entries {
            let mut outputs = Vec::with_capacity(4);
            let mut kink = false;
            for step in [2.0, 1.0, -1.0, -2.0] {
                if name == "input" {
                    let orig = input.as_slice()[idx];
                    x.as_mut_slice()[idx] = orig + step * eps;
                    let (o, t) = stack.forward(&p, &x, true, drop_seed)?;
                    x.as_mut_slice()[idx] = orig;
                    kink |= t.relu_signature(&stack) != base_sig;
                    outputs.push(o);
                } else {
                    let orig = params.get(&name)?.as_slice()[idx];
                    p.get_mut(&name)?.as_mut_slice()[idx] = orig + step * eps;
                    let (o, t) = stack.forward(&p, &input, true, drop_seed)?;
                    p.get_mut(&name)?.as_mut_slice()[idx] = orig;
                    kink |= t.relu_signature(&stack) != base_sig;
                    outputs.push(o);
                }
            }
            if kink {
                report.skipped_kinks += 1;
                continue;
            }
            // unaffected outputs cancel exactly in this grouping
            let diff = (&outputs[3] - &outputs[0]) + (&outputs[1] - &outputs[2]) * 8.0;
            let numeric = diff.dot(&proj) / (12.0 * eps);
            let ga = analytic.as_slice()[idx];
            let rel = (ga - numeric).abs() / (ga.abs() + numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), idx));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, PoolMode};

    #[test]
    fn dense_tanh() {
        let layers = [LayerSpec::Dense {
            units: 8,
            activation: Activation::Tanh,
            dropout: 0.0,
        }];
        let err = grad_check(&layers, (1, 5), 1e-3, 0).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn small_mixed_stack() {
        let layers = [
            LayerSpec::Conv1d {
                num_filters: 3,
                filter_size: 4,
                activation: Activation::Relu,
                dropout: 0.2,
            },
            LayerSpec::Lstm {
                hidden: 3,
                bidirectional: true,
                activation: Activation::Tanh,
                dropout: 0.1,
            },
            LayerSpec::Pool { mode: PoolMode::Last },
            LayerSpec::Dense {
                units: 3,
                activation: Activation::Sigmoid,
                dropout: 0.3,
            },
        ];
        let r = grad_check_report(&layers, (6, 2), 1e-3, 3, usize::MAX).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
        assert!(r.checked > 100);
    }

    #[test]
    fn linear_dense_weight_gradient_is_input() {
        let layers = [LayerSpec::Dense {
            units: 2,
            activation: Activation::Linear,
            dropout: 0.0,
        }];
        let stack = Stack::new("check.", layers.to_vec(), 2).unwrap();
        let mut p = ParamStore::new();
        stack.init_params(&mut p, &mut ChaCha8Rng::seed_from_u64(0));
        let x = Matrix::from_row_slice(1, 2, &[0.5, -1.0]);
        let (y, tape) = stack.forward(&p, &x, false, 0).unwrap();
        let (g, _) = stack.backward(&p, &tape, &Matrix::repeat(1, 2, 1.0)).unwrap();
        let analytic = g["check.0.w"][(0, 0)];
        assert!((analytic - 0.5).abs() < 1e-15);
        assert_eq!(y.shape(), (1, 2));
    }
}
