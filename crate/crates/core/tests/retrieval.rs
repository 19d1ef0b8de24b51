use proptest::prelude::*;

use repairloop::analyzer::AstFeatures;
use repairloop::bandit::RetrievalAction;
use repairloop::memory::{
    similarity, token_trigrams, ComplexityBucket, EpisodeRecord, FailureSignature, Fingerprint,
    MemoryStore, RetrievalMode, SimilarityWeights,
};
use repairloop::validator::{FailureClass, ValidationReport};

const WORDS: &[&str] = &["agent", "table", "update", "value", "policy", "grid", "reward", "state"];
const CLASSES: &[FailureClass] = &[
    FailureClass::Syntax,
    FailureClass::Runtime,
    FailureClass::Semantic,
    FailureClass::Type,
];

fn fingerprint() -> impl Strategy<Value = Fingerprint> {
    (
        0..3usize,
        prop::collection::vec(0..WORDS.len(), 3..8),
        (0..4u32, 0..3u32, 0..12u32),
        0..CLASSES.len(),
        prop::bool::ANY,
    )
        .prop_map(|(fam, words, (fns, depth, cyc), class, keyed)| {
            let text: Vec<&str> = words.iter().map(|&i| WORDS[i]).collect();
            let ast = AstFeatures {
                function_count: fns,
                max_loop_depth: depth,
                approx_cyclomatic: cyc,
                ..Default::default()
            };
            Fingerprint {
                family: format!("fam{fam}"),
                trigrams: token_trigrams(&text.join(" "), 64),
                bucket: ComplexityBucket::of(cyc),
                ast,
                failure: FailureSignature {
                    class: CLASSES[class],
                    key: if keyed { "KeyError".into() } else { String::new() },
                },
            }
        })
}

fn record(i: usize, fingerprint: Fingerprint) -> EpisodeRecord {
    EpisodeRecord {
        record_id: 0,
        timestamp_ms: i as u64,
        task_id: format!("t{i}"),
        fingerprint,
        task_text: String::new(),
        candidate_source: None,
        report: ValidationReport::extraction_failure(),
        reward: 0.0,
        accepted: false,
        duration_secs: 0.0,
        decoding_action: None,
        retrieval_action: RetrievalAction::None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ranked_retrieval_matches_brute_force(
        stored in prop::collection::vec(fingerprint(), 1..30),
        query in fingerprint(),
        k in 1..6usize,
        ast_mode in prop::bool::ANY,
    ) {
        let mut store = MemoryStore::in_memory(1000);
        for (i, fp) in stored.iter().enumerate() {
            store.persist(record(i, fp.clone())).unwrap();
        }
        let weights = SimilarityWeights::default();
        let mode = if ast_mode { RetrievalMode::AstMatch } else { RetrievalMode::FailureMatch };
        let oracle_weights = if ast_mode { SimilarityWeights { failure: 0.0, ..weights } } else { weights };

        // Score every candidate, newest first on ties.
        let mut oracle: Vec<(f64, u64)> = store
            .records()
            .iter()
            .filter(|r| ast_mode || r.fingerprint.failure.class == query.failure.class)
            .map(|r| (similarity(&query, &r.fingerprint, &oracle_weights), r.record_id))
            .collect();
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        oracle.truncate(k);

        let got: Vec<(f64, u64)> = store
            .retrieve(&query, mode, k, &weights)
            .unwrap()
            .iter()
            .map(|s| (s.score, s.record.record_id))
            .collect();
        prop_assert_eq!(got, oracle);
    }
}

#[test]
fn empty_store_is_reported() {
    let store = MemoryStore::in_memory(10);
    let q = record(0, Fingerprint {
        family: "f".into(),
        trigrams: Vec::new(),
        ast: AstFeatures::default(),
        failure: FailureSignature::none(),
        bucket: ComplexityBucket::Low,
    })
    .fingerprint;
    assert!(matches!(
        store.retrieve(&q, RetrievalMode::AstMatch, 1, &SimilarityWeights::default()),
        Err(repairloop::Error::EmptyStore)
    ));
}
