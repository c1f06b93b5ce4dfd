use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparta::gmm::{fit_gmm, fit_gmm_traced, log_likelihood, Gmm};
use sparta::synth::{normal_vec, sample_gmm};

fn random_mixture(seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 2 + (seed % 3) as usize;
    let d = 1 + (seed % 4) as usize;
    let means: Vec<Vec<f64>> = (0..k).map(|_| normal_vec(&mut rng, d).iter().map(|x| 3.0 * x).collect()).collect();
    let vars = (0..k).map(|c| vec![0.5 + c as f64 * 0.3; d]).collect();
    let truth = Gmm::new(vec![1.0 / k as f64; k], means, vars).unwrap();
    sample_gmm(&truth, 300, &mut rng)
}

#[test]
fn em_never_decreases_likelihood() {
    for seed in 0..100 {
        let frames = random_mixture(seed);
        let k = 2 + (seed % 3) as usize;
        let (_, trace) = fit_gmm_traced(&frames, k, 15, seed).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn separated_clusters_recovered() {
    let truth = Gmm::new(
        vec![0.5, 0.5],
        vec![vec![-5.0, 0.0], vec![5.0, 2.0]],
        vec![vec![1.0, 1.0], vec![1.0, 1.0]],
    )
    .unwrap();
    let frames = sample_gmm(&truth, 4000, &mut ChaCha8Rng::seed_from_u64(3));
    let fit = fit_gmm(&frames, 2, 30, 11).unwrap();
    for m in truth.means() {
        let best = fit
            .means()
            .iter()
            .map(|f| f.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "mean {m:?} missed by {best}");
    }
    assert!(fit.weights().iter().all(|w| (w - 0.5).abs() < 0.05));
}

#[test]
fn final_trace_entry_is_the_model_likelihood() {
    let frames = random_mixture(7);
    let (gmm, trace) = fit_gmm_traced(&frames, 3, 5, 1).unwrap();
    assert_eq!(trace.len(), 6);
    let ll = log_likelihood(&gmm, &frames).unwrap();
    assert!((ll - trace[5]).abs() < 1e-9 * ll.abs().max(1.0));
}
