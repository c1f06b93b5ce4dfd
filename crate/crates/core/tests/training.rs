mod common;

use std::collections::BTreeMap;

use common::{fc_config, synthetic_split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparta::ivector::VectorKind;
use sparta::model::{build_network, FeatureInput, Model, NetworkConfig, TrunkKind};
use sparta::nn::{Matrix, OptimizerSpec, ParamStore};
use sparta::synth::{normal_vec, MultiTaskSpec};
use sparta::train::{
    epoch_batches, grid_search, selection_score, task_scores, train, DataSplit, GridSpace, Sample, ScheduleMode,
    TrainConfig, TrainError,
};
use sparta::{Dataset, Task};

/// Gender decided by the sign of a fixed direction, with a margin.
fn separable_gender(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dir = normal_vec(&mut ChaCha8Rng::seed_from_u64(99), 16);
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = Vec::new();
    while out.len() < n {
        let x = normal_vec(&mut rng, 16);
        let proj = x.iter().zip(&dir).map(|(a, b)| a * b).sum::<f64>() / norm;
        if proj.abs() < 0.5 {
            continue;
        }
        out.push(Sample {
            id: format!("u{}", out.len()),
            dataset: Dataset::SARA,
            input: Matrix::from_row_slice(1, 16, &x),
            labels: [Some(usize::from(proj > 0.0)), None, None],
        });
    }
    out
}

fn i16_config(tasks: &[Task]) -> NetworkConfig {
    let mut cfg = NetworkConfig::default_for(FeatureInput::Vector(VectorKind::I), TrunkKind::Fc, tasks);
    cfg.vector_dims.i = 16;
    cfg
}

#[test]
fn stl_gender_on_separable_data() {
    let data = DataSplit {
        train: separable_gender(400, 1),
        dev: separable_gender(100, 2),
        test: Vec::new(),
    };
    let model = build_network(&i16_config(&[Task::Gender]), 0).unwrap();
    let cfg = TrainConfig { epochs: 20, ..Default::default() };
    let (_, history) = train(model, &data, &cfg).unwrap();
    assert!(history.best_score >= 0.99, "{}", history.best_score);
}

#[test]
fn mtl_run_invariants_and_checkpoint_fidelity() {
    let spec = MultiTaskSpec::default();
    let data = synthetic_split(&spec, VectorKind::Idx);
    let net = fc_config(&spec, VectorKind::Idx, &Task::ALL);
    let cfg = TrainConfig { epochs: 8, seed: 4, ..Default::default() };
    let (best, history) = train(build_network(&net, 2).unwrap(), &data, &cfg).unwrap();

    for rec in &history.epochs {
        for t in Task::ALL {
            assert!(rec.dev_macro_f1.contains_key(&t));
        }
    }
    let max = history.epochs.iter().map(|e| e.score).fold(f64::NEG_INFINITY, f64::max);
    assert!((history.best_score - max).abs() <= 1e-9);
    let first_max = history.epochs.iter().position(|e| e.score == max).unwrap();
    assert_eq!(history.best_epoch, first_max);
    assert!(history.epochs[history.best_epoch].dev_macro_f1.values().all(|f| *f >= 0.95));

    // every head moved only for its own task's batches
    for (head, row) in &history.head_updates {
        for (task, count) in row {
            if head == task {
                assert!(*count > 0);
            } else {
                assert_eq!(*count, 0, "head {head} updated by {task} batches");
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    best.params.save(&path).unwrap();
    let reloaded = Model::from_params(&net, ParamStore::load(&path).unwrap()).unwrap();
    let score = selection_score(&task_scores(&reloaded, &data.dev).unwrap());
    assert!((score - history.best_score).abs() <= 1e-6);
}

#[test]
fn stl_baselines_learn_their_task() {
    let spec = MultiTaskSpec::default();
    let data = synthetic_split(&spec, VectorKind::Idx);
    for task in Task::ALL {
        let net = fc_config(&spec, VectorKind::Idx, &[task]);
        let model = build_network(&net, 1).unwrap();
        assert_eq!(model.active_tasks(), &[task]);
        let (_, h) = train(model, &data, &TrainConfig { epochs: 8, ..Default::default() }).unwrap();
        assert!(h.best_score >= 0.90, "{task}: {}", h.best_score);
        assert!(h.epochs.iter().all(|e| e.dev_macro_f1.len() == 1));
    }
}

#[test]
fn epoch_sample_counts_follow_factors() {
    let spec = MultiTaskSpec { speakers: 40, ..Default::default() };
    let data = synthetic_split(&spec, VectorKind::I);
    let factors: BTreeMap<Task, usize> = [(Task::Gender, 1), (Task::Emotion, 3), (Task::Dialect, 2)].into();
    for mode in [ScheduleMode::Sequential, ScheduleMode::Shuffled] {
        let cfg = TrainConfig { task_factors: factors.clone(), batch_size: 7, mode, ..Default::default() };
        let batches = epoch_batches(&data.train, &Task::ALL, &cfg, 3).unwrap();
        for t in Task::ALL {
            let pool = data.train.iter().filter(|s| s.label(t).is_some()).count();
            let seen: usize = batches.iter().filter(|b| b.task == t).map(|b| b.indices.len()).sum();
            assert_eq!(seen, factors[&t] * pool);
        }
        if mode == ScheduleMode::Sequential {
            // one contiguous run per task
            let switches = batches.windows(2).filter(|w| w[0].task != w[1].task).count();
            assert_eq!(switches, 2);
        }
    }
}

#[test]
fn sequential_mode_trains_too() {
    let spec = MultiTaskSpec { speakers: 120, ..Default::default() };
    let data = synthetic_split(&spec, VectorKind::Ix);
    let net = fc_config(&spec, VectorKind::Ix, &Task::ALL);
    let cfg = TrainConfig { epochs: 6, mode: ScheduleMode::Sequential, ..Default::default() };
    let (_, h) = train(build_network(&net, 0).unwrap(), &data, &cfg).unwrap();
    assert!(h.best_score > 0.8, "{}", h.best_score);
}

#[test]
fn runs_are_reproducible() {
    let data = DataSplit {
        train: separable_gender(120, 5),
        dev: separable_gender(40, 6),
        test: Vec::new(),
    };
    let net = i16_config(&[Task::Gender]);
    let mut net_drop = net.clone();
    net_drop.heads.get_mut(&Task::Gender).unwrap().dropout = 0.3;
    let cfg = TrainConfig { epochs: 3, seed: 11, ..Default::default() };
    let (a, ha) = train(build_network(&net_drop, 3).unwrap(), &data, &cfg).unwrap();
    let (b, hb) = train(build_network(&net_drop, 3).unwrap(), &data, &cfg).unwrap();
    assert_eq!(ha, hb);
    assert_eq!(a.params, b.params);
}

#[test]
fn divergence_is_reported_with_position() {
    let mut train_set = separable_gender(64, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for s in &mut train_set {
        s.input.iter_mut().for_each(|v| *v *= 1e150 * rng.gen::<f64>());
    }
    let data = DataSplit {
        train: train_set,
        dev: separable_gender(10, 2),
        test: Vec::new(),
    };
    let cfg = TrainConfig {
        optimizer: OptimizerSpec::Sgd { lr: 1e10, momentum: 0.0, decay: 0.0 },
        ..Default::default()
    };
    let err = train(build_network(&i16_config(&[Task::Gender]), 0).unwrap(), &data, &cfg).unwrap_err();
    assert!(matches!(err, TrainError::Divergence { epoch: 0, .. }), "{err}");
}

#[test]
fn missing_dev_labels_rejected() {
    let data = DataSplit {
        train: separable_gender(20, 1),
        dev: Vec::new(),
        test: Vec::new(),
    };
    let err = train(build_network(&i16_config(&[Task::Gender]), 0).unwrap(), &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, TrainError::NoDevData(Task::Gender)));
}

#[test]
fn grid_over_four_points_is_ranked_and_repeatable() {
    let data = DataSplit {
        train: separable_gender(80, 1),
        dev: separable_gender(30, 2),
        test: Vec::new(),
    };
    let space: GridSpace = serde_json::from_str(r#"{"hidden": [16, 32], "layers": [1, 2]}"#).unwrap();
    let cfg = TrainConfig { epochs: 2, ..Default::default() };
    let net = i16_config(&[Task::Gender]);
    let a = grid_search(&space, &net, &cfg, &data, None, false).unwrap();
    let b = grid_search(&space, &net, &cfg, &data, None, true).unwrap();
    assert_eq!(a.ranked.len(), 4);
    assert_eq!(a, b);
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.to_tsv().lines().count(), 5);
    for w in a.ranked.windows(2) {
        assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].index < w[1].index));
    }
    let partial = grid_search(&space, &net, &cfg, &data, Some(2), false).unwrap();
    let mut idx: Vec<usize> = partial.ranked.iter().map(|r| r.index).collect();
    idx.sort();
    assert_eq!(idx, vec![0, 1]);
    let too_big: GridSpace = serde_json::from_str(r#"{"hidden": [512]}"#).unwrap();
    let err = grid_search(&too_big, &net, &cfg, &data, None, false).unwrap_err();
    assert!(err.to_string().contains("grid.hidden"), "{err}");
}

#[test]
fn report_after_training_scores_held_out_data() {
    use sparta::eval::{per_dataset_report, Average, Mode};
    let spec = MultiTaskSpec::default();
    let data = synthetic_split(&spec, VectorKind::Idx);
    let net = fc_config(&spec, VectorKind::Idx, &Task::ALL);
    let (best, _) = train(build_network(&net, 0).unwrap(), &data, &TrainConfig { epochs: 6, ..Default::default() }).unwrap();
    let report = per_dataset_report(&[&best], &data.test, Mode::Mtl, Average::Weighted).unwrap();
    for t in Task::ALL {
        let agg = report.aggregate(t).unwrap();
        assert!(agg.macro_f1 >= 0.95, "{t}: {}", agg.macro_f1);
        let cells: u64 = report.rows.iter().filter(|r| r.task == t).map(|r| r.support).sum();
        assert_eq!(cells, agg.support);
    }
    let tsv = report.to_tsv();
    assert!(tsv.starts_with("dataset\ttask\tmode\taccuracy\tmacro_f1\tweighted_f1\tsupport\n"));
    assert!(tsv.contains("# overall_mean\t"));
}
