use super::NnError;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `-ln softmax(logits)[label]` and its gradient `softmax(logits) - onehot(label)`.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
    let classes = logits.len();
    if classes < 2 || label >= classes {
        return Err(NnError::Label { label, classes });
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != label)
        .map(|(_, z)| (z - m).exp())
        .sum();
    let own = logits[label] - m;
    // ln_1p keeps tiny losses accurate when the true class dominates
    let loss = if own == 0.0 {
        rest.ln_1p()
    } else {
        -own + (own.exp() + rest).ln()
    };
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.3; 5], 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!((loss - 1.6094).abs() < 1e-4);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn saturated_margin() {
        let (loss, _) = softmax_cross_entropy(&[50.0, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-20);
        let (loss, _) = softmax_cross_entropy(&[0.0, 1000.0], 0).unwrap();
        assert!((loss - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn label_checks() {
        assert!(matches!(softmax_cross_entropy(&[0.0, 1.0], 2), Err(NnError::Label { .. })));
        assert!(softmax_cross_entropy(&[0.0], 0).is_err());
    }

    #[test]
    fn gradient_sums_to_zero() {
        let (_, g) = softmax_cross_entropy(&[1.5, -2.0, 0.25, 7.0], 1).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[1] < 0.0);
    }
}
