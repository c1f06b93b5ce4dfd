use std::collections::BTreeMap;
use std::path::PathBuf;

use proptest::prelude::*;
use sparta::corpus::{split_manifest_to_string, split_speaker_disjoint, validate_split};
use sparta::{Corpus, Dataset, Dialect, Emotion, Gender, SetName, UtteranceRecord};

/// Per speaker: (dataset index, gender, dialect, utterance emotions).
type SpeakerSpec = (usize, Option<usize>, Option<usize>, Vec<Option<usize>>);

fn speaker_strategy() -> impl Strategy<Value = SpeakerSpec> {
    (
        0usize..6,
        prop::option::of(0usize..2),
        prop::option::of(0usize..5),
        prop::collection::vec(prop::option::of(0usize..6), 1..6),
    )
}

fn build_corpus(speakers: &[SpeakerSpec]) -> Corpus {
    let mut records = Vec::new();
    for (s, (ds, g, d, emotions)) in speakers.iter().enumerate() {
        for (u, e) in emotions.iter().enumerate() {
            let (g, e) = if g.is_none() && d.is_none() && e.is_none() { (Some(0), *e) } else { (*g, *e) };
            records.push(UtteranceRecord {
                id: format!("s{s}_u{u}"),
                dataset: Dataset::ALL[*ds],
                speaker_id: format!("s{s}"),
                audio_path: PathBuf::from(format!("s{s}_u{u}.wav")),
                gender: g.and_then(Gender::from_index),
                dialect: d.and_then(Dialect::from_index),
                emotion: e.and_then(Emotion::from_index),
            });
        }
    }
    Corpus::new(records).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn speakers_never_cross_sets(
        speakers in prop::collection::vec(speaker_strategy(), 3..25),
        seed in any::<u64>(),
    ) {
        let corpus = build_corpus(&speakers);
        let split = split_speaker_disjoint(&corpus, [0.8, 0.1, 0.1], seed).unwrap();
        let mut home: BTreeMap<&str, SetName> = BTreeMap::new();
        for r in corpus.iter() {
            let set = split.set_of(&r.id).expect("every utterance assigned");
            let prev = *home.entry(r.speaker_id.as_str()).or_insert(set);
            prop_assert_eq!(prev, set);
        }
        prop_assert_eq!(split.assignment.len(), corpus.len());
        let report = validate_split(&corpus, &split).unwrap();
        prop_assert!(!report.speaker_overlap);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn same_seed_same_bytes(
        speakers in prop::collection::vec(speaker_strategy(), 3..25),
        seed in any::<u64>(),
    ) {
        let corpus = build_corpus(&speakers);
        let a = split_manifest_to_string(&split_speaker_disjoint(&corpus, [0.8, 0.1, 0.1], seed).unwrap());
        let b = split_manifest_to_string(&split_speaker_disjoint(&corpus, [0.8, 0.1, 0.1], seed).unwrap());
        prop_assert_eq!(a, b);
    }
}
