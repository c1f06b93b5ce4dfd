use proptest::prelude::*;
use sparta::eval::{accuracy, confusion_matrix, macro_f1, weighted_f1, ConfusionMatrix};

const NAMES: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

/// Walks the samples once per class, counting hits and misses directly.
fn oracle_macro_f1(golds: &[usize], preds: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..classes {
        let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
        for (g, p) in golds.iter().zip(preds) {
            match (*g == c, *p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fneg += 1,
                _ => {}
            }
        }
        let denom = 2 * tp + fp + fneg;
        sum += if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 };
    }
    sum / classes as f64
}

fn oracle_accuracy(golds: &[usize], preds: &[usize]) -> f64 {
    golds.iter().zip(preds).filter(|(g, p)| g == p).count() as f64 / golds.len() as f64
}

fn labels() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=6).prop_flat_map(|c| (Just(c), prop::collection::vec((0..c, 0..c), 1..200)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_per_sample_oracle((c, pairs) in labels()) {
        let golds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion_matrix(&golds, &preds, &NAMES[..c]).unwrap();
        prop_assert_eq!(macro_f1(&cm), oracle_macro_f1(&golds, &preds, c));
        prop_assert_eq!(accuracy(&cm).unwrap(), oracle_accuracy(&golds, &preds));
    }

    #[test]
    fn bounded_and_perfect_only_on_diagonal((c, pairs) in labels()) {
        let golds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let cm = confusion_matrix(&golds, &preds, &NAMES[..c]).unwrap();
        let (f, a, w) = (macro_f1(&cm), accuracy(&cm).unwrap(), weighted_f1(&cm));
        prop_assert!((0.0..=1.0).contains(&f) && (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&w));
        prop_assert_eq!(a == 1.0, golds == preds);
        // macro-F1 of 1 also needs every class to appear
        let all_present = (0..c).all(|k| golds.contains(&k));
        prop_assert_eq!(f == 1.0, golds == preds && all_present);
    }

    #[test]
    fn macro_f1_ignores_class_order((c, pairs) in labels(), rot in 0usize..6) {
        let golds: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let perm = |k: usize| (k + rot) % c;
        let cm = confusion_matrix(&golds, &preds, &NAMES[..c]).unwrap();
        let g2: Vec<usize> = golds.iter().map(|&k| perm(k)).collect();
        let p2: Vec<usize> = preds.iter().map(|&k| perm(k)).collect();
        let cm2 = confusion_matrix(&g2, &p2, &NAMES[..c]).unwrap();
        prop_assert!((macro_f1(&cm) - macro_f1(&cm2)).abs() < 1e-12);
    }
}

#[test]
fn worked_two_class_example() {
    let cm = ConfusionMatrix::from_counts(&["x", "y"], vec![vec![4, 1], vec![2, 3]]);
    assert!((macro_f1(&cm) - 0.69697).abs() < 5e-6);
    assert_eq!(accuracy(&cm).unwrap(), 0.7);
}
