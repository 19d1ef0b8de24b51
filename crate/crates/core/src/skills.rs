//! Skill library mined from accepted programs.
//!
//! Skills are prompt evidence only. A new skill is quarantined until an
//! attempt it was offered to is accepted.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use blake2::digest::consts::U32;
use blake2::{Blake2b, Digest};
use serde::{Deserialize, Serialize};

use crate::analyzer::Analyzer;
use crate::error::{Error, Result};
use crate::jsonl::{self, WriterLock};

pub const DEFAULT_SKILL_CAP: usize = 200;

/// BLAKE2b with a 32-byte digest, hex encoded.
pub fn blake2b256_hex(bytes: &[u8]) -> String {
    hex::encode(Blake2b::<U32>::digest(bytes))
}

pub fn skill_hash(canonical_dump: &str) -> String {
    blake2b256_hex(canonical_dump.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRecord {
    pub hash: String,
    pub name: String,
    pub canonical_body: String,
    /// Original source lines of the unit, shown to the generator.
    pub excerpt: String,
    pub params: Vec<String>,
    pub families: BTreeSet<String>,
    pub n_offered: u64,
    pub n_succ: u64,
    pub quarantined: bool,
    /// Logical clock value of the last harvest or offer.
    pub last_used: u64,
}

impl SkillRecord {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    pub fn success_ratio(&self) -> f64 {
        self.n_succ as f64 / self.n_offered.max(1) as f64
    }
}

/// One record per unit of an accepted source, quarantined with zero counters.
///
/// A parse failure here means the analyzer disagrees with the validator; it
/// is logged and nothing is harvested.
pub fn harvest_skills(analyzer: &dyn Analyzer, source: &str, family: &str) -> Result<Vec<SkillRecord>> {
    let units = match analyzer.units(source) {
        Ok(u) => u,
        Err(Error::ParseFailure(msg)) => {
            log::warn!("skill harvest skipped: accepted source failed to parse: {msg}");
            return Ok(Vec::new());
        }
        Err(e) => return Err(e),
    };
    let dumps = match analyzer.canonical_dumps(source) {
        Ok(d) => d,
        Err(Error::ParseFailure(msg)) => {
            log::warn!("skill harvest skipped: accepted source failed to parse: {msg}");
            return Ok(Vec::new());
        }
        Err(e) => return Err(e),
    };
    if units.len() != dumps.len() {
        return Err(Error::AnalyzerProtocol(format!(
            "{} units but {} canonical dumps",
            units.len(),
            dumps.len()
        )));
    }
    Ok(units
        .into_iter()
        .zip(dumps)
        .map(|(unit, dump)| SkillRecord {
            hash: skill_hash(&dump),
            excerpt: unit.excerpt(source),
            name: unit.qualified_name,
            canonical_body: dump,
            params: unit.params,
            families: BTreeSet::from([family.to_string()]),
            n_offered: 0,
            n_succ: 0,
            quarantined: true,
            last_used: 0,
        })
        .collect())
}

#[derive(Debug)]
pub struct SkillLibrary {
    path: Option<PathBuf>,
    skills: Vec<SkillRecord>,
    cap: usize,
    clock: u64,
    _lock: Option<WriterLock>,
}

impl SkillLibrary {
    pub fn in_memory(cap: usize) -> Self {
        Self {
            path: None,
            skills: Vec::new(),
            cap: cap.max(1),
            clock: 0,
            _lock: None,
        }
    }

    /// Opens the library file as its single writer.
    pub fn open(path: &Path, cap: usize) -> Result<Self> {
        let lock = WriterLock::acquire(path)?;
        let mut lib = Self::load(path, cap)?;
        lib._lock = Some(lock);
        Ok(lib)
    }

    /// Read-only snapshot.
    pub fn load(path: &Path, cap: usize) -> Result<Self> {
        let skills: Vec<SkillRecord> = jsonl::read_all(path)?;
        let clock = skills.iter().map(|s| s.last_used).max().unwrap_or(0);
        Ok(Self {
            path: Some(path.to_path_buf()),
            skills,
            cap: cap.max(1),
            clock,
            _lock: None,
        })
    }

    pub fn skills(&self) -> &[SkillRecord] {
        &self.skills
    }

    pub fn get(&self, hash: &str) -> Option<&SkillRecord> {
        self.skills.iter().find(|s| s.hash == hash)
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Adds harvested records. A known hash only gains families and a fresh
    /// `last_used`. Returns the number of new skills.
    pub fn merge(&mut self, harvested: Vec<SkillRecord>) -> usize {
        let mut added = 0;
        for mut rec in harvested {
            let now = self.tick();
            if let Some(existing) = self.skills.iter_mut().find(|s| s.hash == rec.hash) {
                existing.families.extend(rec.families);
                existing.last_used = now;
            } else {
                rec.last_used = now;
                self.skills.push(rec);
                added += 1;
            }
        }
        self.evict();
        added
    }

    /// Least recently used first among never-successful quarantined skills,
    /// then least recently used overall.
    fn evict(&mut self) {
        while self.skills.len() > self.cap {
            let victim = self
                .skills
                .iter()
                .enumerate()
                .min_by_key(|(_, s)| (!(s.quarantined && s.n_succ == 0), s.last_used))
                .map(|(i, _)| i)
                .expect("non-empty");
            self.skills.remove(victim);
        }
    }

    /// Picks up to `k` skills for `family` and counts the offer.
    ///
    /// Order: family match, success ratio, trusted before quarantined,
    /// recency, then hash.
    pub fn select(&mut self, family: &str, k: usize) -> Result<Vec<SkillRecord>> {
        if self.skills.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        let mut order: Vec<usize> = (0..self.skills.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.skills[a], &self.skills[b]);
            y.families
                .contains(family)
                .cmp(&x.families.contains(family))
                .then(y.success_ratio().total_cmp(&x.success_ratio()))
                .then(x.quarantined.cmp(&y.quarantined))
                .then(y.last_used.cmp(&x.last_used))
                .then(x.hash.cmp(&y.hash))
        });
        order.truncate(k.max(1));
        let now = self.tick();
        Ok(order
            .into_iter()
            .map(|i| {
                let s = &mut self.skills[i];
                s.n_offered += 1;
                s.last_used = now;
                s.clone()
            })
            .collect())
    }

    /// Credits the offered skills when the attempt was accepted; the first
    /// such success lifts quarantine.
    pub fn record_outcome(&mut self, offered: &[String], accepted: bool) {
        if !accepted {
            return;
        }
        for hash in offered {
            if let Some(s) = self.skills.iter_mut().find(|s| &s.hash == hash) {
                s.n_succ = (s.n_succ + 1).min(s.n_offered);
                s.quarantined = false;
            }
        }
    }

    /// Rewrites the library file.
    pub fn save(&self) -> Result<()> {
        match (&self.path, &self._lock) {
            (None, _) => Ok(()),
            (Some(_), None) => Err(Error::StorageFailure("skill library opened read-only".into())),
            (Some(path), Some(_)) => jsonl::write_all(path, &self.skills),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analyzer::{AnalyzerMode, AnalyzerRequest, AnalyzerResponse, FixtureAnalyzer, Unit};

    #[test]
    fn empty_input_vector() {
        // Published BLAKE2b-256 digest of the empty message.
        assert_eq!(
            blake2b256_hex(b""),
            "0e5751c026e543b2e8ab2eb06099daa1d1e5df47778f7787faab45cdf12fe3a8"
        );
    }

    #[test]
    fn one_byte_difference() {
        // Reference digests from Python's hashlib.blake2b(digest_size=32).
        assert_eq!(
            skill_hash("FunctionDef(v0)"),
            "b099b254e38c6a1e4ada1647e0587ad5ef52d593654115441df987b4a7102bab"
        );
        assert_eq!(
            skill_hash("FunctionDef(v1)"),
            "80e4448d2f30b38c2c716f7bdcf33f4cb28ade5bd86f7844acea68f500c0b183"
        );
    }

    fn record(hash: &str, family: &str, offered: u64, succ: u64) -> SkillRecord {
        SkillRecord {
            hash: hash.into(),
            name: hash.into(),
            canonical_body: String::new(),
            excerpt: String::new(),
            params: vec![],
            families: BTreeSet::from([family.to_string()]),
            n_offered: offered,
            n_succ: succ,
            quarantined: succ == 0,
            last_used: 0,
        }
    }

    #[test]
    fn empty_library() {
        let mut lib = SkillLibrary::in_memory(10);
        assert!(matches!(lib.select("sarsa", 1), Err(Error::EmptyLibrary)));
    }

    #[test]
    fn quarantined_skill_is_still_offered() {
        let mut lib = SkillLibrary::in_memory(10);
        lib.merge(vec![record("a", "sarsa", 0, 0)]);
        let got = lib.select("sarsa", 3).unwrap();
        assert_eq!(got.len(), 1);
        assert!(got[0].quarantined);
        assert_eq!(lib.get("a").unwrap().n_offered, 1);
    }

    #[test]
    fn ratio_ordering() {
        let mut lib = SkillLibrary::in_memory(10);
        lib.merge(vec![
            record("low", "sarsa", 3, 1),
            record("high", "sarsa", 3, 2),
            record("other", "q_learning", 1, 1),
        ]);
        let got = lib.select("sarsa", 3).unwrap();
        let names: Vec<_> = got.iter().map(|s| s.hash.as_str()).collect();
        assert_eq!(names, ["high", "low", "other"]);
    }

    #[test]
    fn outcome_rules() {
        let mut lib = SkillLibrary::in_memory(10);
        lib.merge(vec![record("a", "f", 0, 0), record("b", "f", 0, 0)]);
        let offered: Vec<String> = lib.select("f", 1).unwrap().into_iter().map(|s| s.hash).collect();
        assert_eq!(offered, ["b"]);
        lib.record_outcome(&offered, false);
        assert_eq!(lib.get("b").unwrap().n_succ, 0);
        assert!(lib.get("b").unwrap().quarantined);
        lib.record_outcome(&offered, true);
        let b = lib.get("b").unwrap();
        assert_eq!((b.n_offered, b.n_succ, b.quarantined), (1, 1, false));
        let a = lib.get("a").unwrap();
        assert_eq!((a.n_offered, a.n_succ, a.quarantined), (0, 0, true));
    }

    #[test]
    fn eviction_prefers_unproven_skills() {
        let mut lib = SkillLibrary::in_memory(2);
        lib.merge(vec![record("proven", "f", 2, 1)]);
        lib.merge(vec![record("old", "f", 0, 0)]);
        lib.merge(vec![record("new", "f", 0, 0)]);
        let left: Vec<_> = lib.skills().iter().map(|s| s.hash.as_str()).collect();
        assert_eq!(left, ["proven", "new"]);
    }

    #[test]
    fn harvest_and_merge() {
        let source = "def f(a):\n    return a\n\ndef g(b):\n    return b\n";
        let mut fx = FixtureAnalyzer::new();
        let units = vec![
            Unit { qualified_name: "f".into(), params: vec!["a".into()], span: (1, 2) },
            Unit { qualified_name: "g".into(), params: vec!["b".into()], span: (4, 5) },
        ];
        fx.record(&AnalyzerRequest::new(AnalyzerMode::Units, source), AnalyzerResponse::units(units));
        let dump = "FunctionDef(args=[p0], body=[Return(p0)])".to_string();
        fx.record(
            &AnalyzerRequest::new(AnalyzerMode::CanonicalDump, source),
            AnalyzerResponse::dumps(vec![dump.clone(), dump]),
        );
        let recs = harvest_skills(&fx, source, "sarsa").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].hash, recs[1].hash);
        assert_eq!(recs[1].excerpt, "def g(b):\n    return b");
        let mut lib = SkillLibrary::in_memory(10);
        assert_eq!(lib.merge(recs), 1);
        let again = harvest_skills(&fx, source, "q_learning").unwrap();
        assert_eq!(lib.merge(again), 0);
        assert_eq!(lib.len(), 1);
        assert_eq!(lib.skills()[0].families.len(), 2);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.jsonl");
        let mut lib = SkillLibrary::open(&path, 10).unwrap();
        lib.merge(vec![record("a", "f", 0, 0), record("b", "g", 0, 0)]);
        lib.select("f", 1).unwrap();
        lib.save().unwrap();
        let bytes = std::fs::read(&path).unwrap();
        drop(lib);
        let reloaded = SkillLibrary::open(&path, 10).unwrap();
        reloaded.save().unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(reloaded.get("a").unwrap().n_offered, 1);
    }
}
