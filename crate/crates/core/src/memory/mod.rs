//! Episodic memory: deterministic fingerprints, similarity and the record store.

mod fingerprint;
mod similarity;
mod store;

pub use fingerprint::{
    compute_fingerprint, task_family, token_trigrams, ComplexityBucket, FailureSignature,
    Fingerprint, Trigram, DEFAULT_TRIGRAM_CAP, GENERIC_FAMILY,
};
pub use similarity::{
    ast_similarity, combine, components, failure_similarity, jaccard, multiset_jaccard,
    similarity, structural_similarity, SimilarityWeights,
};
pub use store::{
    now_ms, EpisodeRecord, MemoryStore, RetrievalMode, ScoredEpisode, DEFAULT_RETENTION_CAP,
};
