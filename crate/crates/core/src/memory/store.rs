use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::fingerprint::Fingerprint;
use super::similarity::{similarity, SimilarityWeights};
use crate::bandit::RetrievalAction;
use crate::error::{Error, Result};
use crate::jsonl::{self, WriterLock};
use crate::validator::ValidationReport;

pub const DEFAULT_RETENTION_CAP: usize = 500;

/// One attempt, successful or not. Immutable once persisted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub record_id: u64,
    pub timestamp_ms: u64,
    pub task_id: String,
    pub fingerprint: Fingerprint,
    pub task_text: String,
    /// Absent when extraction failed.
    pub candidate_source: Option<String>,
    pub report: ValidationReport,
    pub reward: f64,
    pub accepted: bool,
    pub duration_secs: f64,
    pub decoding_action: Option<String>,
    pub retrieval_action: RetrievalAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RetrievalMode {
    FailureMatch,
    AstMatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredEpisode<'a> {
    pub record: &'a EpisodeRecord,
    pub score: f64,
}

/// Append-only episodic store with a retention cap.
#[derive(Debug)]
pub struct MemoryStore {
    path: Option<PathBuf>,
    records: Vec<EpisodeRecord>,
    cap: usize,
    next_id: u64,
    _lock: Option<WriterLock>,
}

impl MemoryStore {
    pub fn in_memory(cap: usize) -> Self {
        Self {
            path: None,
            records: Vec::new(),
            cap: cap.max(1),
            next_id: 1,
            _lock: None,
        }
    }

    /// Opens the store as its single writer.
    pub fn open(path: &Path, cap: usize) -> Result<Self> {
        let lock = WriterLock::acquire(path)?;
        let mut store = Self::load(path, cap)?;
        store._lock = Some(lock);
        Ok(store)
    }

    /// Read-only snapshot; does not take the writer lock.
    pub fn load(path: &Path, cap: usize) -> Result<Self> {
        let records: Vec<EpisodeRecord> = jsonl::read_all(path)?;
        let next_id = records.iter().map(|r| r.record_id).max().unwrap_or(0) + 1;
        Ok(Self {
            path: Some(path.to_path_buf()),
            records,
            cap: cap.max(1),
            next_id,
            _lock: None,
        })
    }

    pub fn records(&self) -> &[EpisodeRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Assigns the record id, appends durably and evicts the oldest records
    /// beyond the retention cap.
    pub fn persist(&mut self, mut record: EpisodeRecord) -> Result<u64> {
        if record.accepted && crate::validator::validator_pass(&record.report) == 0 {
            return Err(Error::StorageFailure(
                "accepted record carries a failing report".into(),
            ));
        }
        if self.path.is_some() && self._lock.is_none() {
            return Err(Error::StorageFailure("store opened read-only".into()));
        }
        record.record_id = self.next_id;
        self.next_id += 1;
        let id = record.record_id;
        if let Some(path) = &self.path {
            jsonl::append(path, &record).map_err(storage)?;
        }
        self.records.push(record);
        if self.records.len() > self.cap {
            let excess = self.records.len() - self.cap;
            self.records.drain(..excess);
            if let Some(path) = &self.path {
                jsonl::write_all(path, &self.records).map_err(storage)?;
            }
        }
        Ok(id)
    }

    /// Ranked records for `query`, at most `k`.
    ///
    /// `FailureMatch` keeps records whose failure class equals the query's;
    /// `AstMatch` ranks everything with the failure weight zeroed. Ties go to
    /// the more recent record, then the larger id.
    pub fn retrieve(
        &self,
        query: &Fingerprint,
        mode: RetrievalMode,
        k: usize,
        weights: &SimilarityWeights,
    ) -> Result<Vec<ScoredEpisode<'_>>> {
        if self.records.is_empty() {
            return Err(Error::EmptyStore);
        }
        let weights = match mode {
            RetrievalMode::FailureMatch => *weights,
            RetrievalMode::AstMatch => SimilarityWeights {
                failure: 0.0,
                ..*weights
            },
        };
        let mut scored: Vec<ScoredEpisode<'_>> = self
            .records
            .iter()
            .filter(|r| {
                mode == RetrievalMode::AstMatch
                    || r.fingerprint.failure.class == query.failure.class
            })
            .map(|r| ScoredEpisode {
                record: r,
                score: similarity(query, &r.fingerprint, &weights),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.record.timestamp_ms.cmp(&a.record.timestamp_ms))
                .then(b.record.record_id.cmp(&a.record.record_id))
        });
        scored.truncate(k.max(1));
        Ok(scored)
    }
}

fn storage(e: Error) -> Error {
    match e {
        Error::StorageFailure(_) => e,
        other => Error::StorageFailure(other.to_string()),
    }
}

pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::AstFeatures;
    use crate::memory::fingerprint::{token_trigrams, ComplexityBucket, FailureSignature};
    use crate::validator::{CheckResult, FailureClass, Stage};
    use std::time::Duration;

    fn fp(text: &str, class: FailureClass, functions: u32) -> Fingerprint {
        Fingerprint {
            family: "q_learning".into(),
            trigrams: token_trigrams(text, 256),
            ast: AstFeatures {
                function_count: functions,
                ..AstFeatures::default()
            },
            failure: FailureSignature {
                class,
                key: String::new(),
            },
            bucket: ComplexityBucket::Low,
        }
    }

    fn record(fingerprint: Fingerprint, ts: u64) -> EpisodeRecord {
        EpisodeRecord {
            record_id: 0,
            timestamp_ms: ts,
            task_id: "t".into(),
            fingerprint,
            task_text: "task".into(),
            candidate_source: Some("x = 1\n".into()),
            report: ValidationReport::from_checks(
                vec![CheckResult::failed(Stage::Syntax, "SyntaxError: bad")],
                Duration::from_millis(5),
            ),
            reward: -0.25,
            accepted: false,
            duration_secs: 0.005,
            decoding_action: None,
            retrieval_action: RetrievalAction::None,
        }
    }

    #[test]
    fn empty_store_errors() {
        let store = MemoryStore::in_memory(10);
        let q = fp("a b c", FailureClass::Unknown, 0);
        assert!(matches!(
            store.retrieve(&q, RetrievalMode::AstMatch, 1, &SimilarityWeights::default()),
            Err(Error::EmptyStore)
        ));
    }

    #[test]
    fn failure_match_filters_by_class() {
        let mut store = MemoryStore::in_memory(10);
        store.persist(record(fp("a b c", FailureClass::Runtime, 1), 1)).unwrap();
        store.persist(record(fp("a b c", FailureClass::Import, 1), 2)).unwrap();
        let q = fp("x y z", FailureClass::Runtime, 3);
        for k in [1, 5] {
            let hits = store
                .retrieve(&q, RetrievalMode::FailureMatch, k, &SimilarityWeights::default())
                .unwrap();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].record.fingerprint.failure.class, FailureClass::Runtime);
        }
    }

    #[test]
    fn ties_prefer_recent_then_larger_id() {
        let mut store = MemoryStore::in_memory(10);
        let a = store.persist(record(fp("a b c", FailureClass::Unknown, 1), 5)).unwrap();
        let b = store.persist(record(fp("a b c", FailureClass::Unknown, 1), 5)).unwrap();
        let c = store.persist(record(fp("a b c", FailureClass::Unknown, 1), 9)).unwrap();
        let q = fp("a b c", FailureClass::Unknown, 1);
        let ids: Vec<u64> = store
            .retrieve(&q, RetrievalMode::AstMatch, 3, &SimilarityWeights::default())
            .unwrap()
            .iter()
            .map(|h| h.record.record_id)
            .collect();
        assert_eq!(ids, vec![c, b, a]);
    }

    #[test]
    fn persist_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        let mut store = MemoryStore::open(&path, 10).unwrap();
        let mut rec = record(fp("train a q learning agent", FailureClass::Syntax, 2), 42);
        rec.reward = 0.1 + 0.2;
        store.persist(rec).unwrap();
        let written = store.records()[0].clone();
        drop(store);
        let reloaded = MemoryStore::load(&path, 10).unwrap();
        assert_eq!(reloaded.records(), &[written]);
    }

    #[test]
    fn eviction_is_oldest_first() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        let mut store = MemoryStore::open(&path, 100).unwrap();
        for i in 0..101 {
            store.persist(record(fp("a b c", FailureClass::Syntax, 1), i)).unwrap();
        }
        assert_eq!(store.len(), 100);
        assert_eq!(store.records()[0].record_id, 2);
        drop(store);
        let reloaded = MemoryStore::load(&path, 100).unwrap();
        assert_eq!(reloaded.len(), 100);
        assert_eq!(reloaded.records()[0].record_id, 2);
    }

    #[test]
    fn second_writer_fails() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        let _held = MemoryStore::open(&path, 10).unwrap();
        assert!(matches!(
            MemoryStore::open(&path, 10),
            Err(Error::StorageFailure(_))
        ));
    }

    #[test]
    fn read_only_snapshot_cannot_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("memory.jsonl");
        let mut snap = MemoryStore::load(&path, 10).unwrap();
        assert!(snap.persist(record(fp("a b c", FailureClass::Syntax, 1), 1)).is_err());
    }

    #[test]
    fn accepted_record_needs_passing_report() {
        let mut store = MemoryStore::in_memory(10);
        let mut rec = record(fp("a b c", FailureClass::Syntax, 1), 1);
        rec.accepted = true;
        assert!(store.persist(rec).is_err());
    }
}
