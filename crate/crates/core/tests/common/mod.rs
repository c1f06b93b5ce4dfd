#![allow(dead_code)]

use sparta::corpus::split_speaker_disjoint;
use sparta::ivector::VectorKind;
use sparta::model::{FeatureInput, NetworkConfig, TrunkKind};
use sparta::synth::{multitask_dataset, synthetic_corpus, vector_inputs, MultiTaskSpec};
use sparta::train::{assemble_data, DataSplit};
use sparta::Task;

/// The 3-task generator split speaker-disjointly 80/10/10 and viewed as `kind` vectors.
pub fn synthetic_split(spec: &MultiTaskSpec, kind: VectorKind) -> DataSplit {
    let utts = multitask_dataset(spec);
    let corpus = synthetic_corpus(&utts);
    let split = split_speaker_disjoint(&corpus, [0.8, 0.1, 0.1], spec.seed).unwrap();
    assemble_data(&corpus, &split, &vector_inputs(&utts, kind)).unwrap()
}

pub fn fc_config(spec: &MultiTaskSpec, kind: VectorKind, tasks: &[Task]) -> NetworkConfig {
    let mut cfg = NetworkConfig::default_for(FeatureInput::Vector(kind), TrunkKind::Fc, tasks);
    cfg.vector_dims = spec.vector_dims();
    cfg
}
