//! Gated transition consolidation, AST-diff repair operators and gap hints.
//!
//! Everything here only produces prompt text; none of it can accept code.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::analyzer::Analyzer;
use crate::error::{Error, Result};
use crate::exec::bound_text;
use crate::jsonl::{self, WriterLock};
use crate::validator::FailureClass;

pub const HINT_TEXT_CAP: usize = 240;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraceConfig {
    /// Minimum gain in passed checks.
    pub delta_p: u32,
    /// Minimum gain in total score points.
    pub delta_v: u32,
    /// Offer-success ratio needed once an operator has been offered.
    pub rho: f64,
    pub top_k: usize,
    pub bootstrap_enabled: bool,
    pub hint_ttl: u32,
}

impl Default for GraceConfig {
    fn default() -> Self {
        Self {
            delta_p: 1,
            delta_v: 5,
            rho: 0.5,
            top_k: 2,
            bootstrap_enabled: true,
            hint_ttl: 1,
        }
    }
}

impl GraceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) || self.top_k == 0 {
            return Err(Error::InvalidConfig("rho must be in [0, 1] and top_k >= 1".into()));
        }
        Ok(())
    }
}

/// `accepted`, or enough check progress without losing points, or enough
/// points without losing checks.
pub fn consolidation_gate(
    cfg: &GraceConfig,
    accepted: bool,
    p: u32,
    p_prev: u32,
    v: u32,
    v_prev: u32,
) -> bool {
    let (p, p_prev, v, v_prev) = (i64::from(p), i64::from(p_prev), i64::from(v), i64::from(v_prev));
    accepted
        || (p - p_prev >= i64::from(cfg.delta_p) && v >= v_prev)
        || (v - v_prev >= i64::from(cfg.delta_v) && p >= p_prev)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairOperator {
    pub id: u64,
    pub from_failure: FailureClass,
    pub to_failure: FailureClass,
    pub added_kinds: std::collections::BTreeMap<String, u32>,
    pub removed_kinds: std::collections::BTreeMap<String, u32>,
    pub hint_text: String,
    pub n_off: u64,
    pub n_succ_off: u64,
    /// Passed-check gain of the transition the operator came from.
    pub progress_gain: i64,
    pub created_at: u64,
    pub last_offered: u64,
}

impl RepairOperator {
    pub fn success_ratio(&self) -> f64 {
        self.n_succ_off as f64 / self.n_off.max(1) as f64
    }
}

fn top_kinds(kinds: &std::collections::BTreeMap<String, u32>, n: usize) -> Vec<&str> {
    let mut v: Vec<(&String, &u32)> = kinds.iter().filter(|(_, c)| **c > 0).collect();
    v.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    v.into_iter().take(n).map(|(k, _)| k.as_str()).collect()
}

fn failure_label(class: FailureClass) -> &'static str {
    match class {
        FailureClass::Unknown => "no failure",
        other => other.code(),
    }
}

/// Operator from the AST difference of a gated transition, or `None` when
/// the difference is empty or either side does not parse.
pub fn derive_operator(
    analyzer: &dyn Analyzer,
    prev_source: &str,
    curr_source: &str,
    prev_failure: FailureClass,
    curr_failure: FailureClass,
    progress_gain: i64,
) -> Result<Option<RepairOperator>> {
    let diff = match analyzer.ast_diff(prev_source, curr_source) {
        Ok(d) => d,
        Err(Error::ParseFailure(msg)) => {
            log::info!("operator derivation skipped: {msg}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    if diff.is_empty() {
        return Ok(None);
    }
    let added = top_kinds(&diff.added, 3);
    let change = if added.is_empty() {
        format!("changes removing {}", top_kinds(&diff.removed, 3).join(", "))
    } else {
        format!("changes adding {}", added.join(", "))
    };
    let hint = format!(
        "when {}, {} preceded {}",
        failure_label(prev_failure),
        change,
        failure_label(curr_failure)
    );
    Ok(Some(RepairOperator {
        id: 0,
        from_failure: prev_failure,
        to_failure: curr_failure,
        added_kinds: diff.added,
        removed_kinds: diff.removed,
        hint_text: bound_text(&hint, HINT_TEXT_CAP),
        n_off: 0,
        n_succ_off: 0,
        progress_gain,
        created_at: 0,
        last_offered: 0,
    }))
}

/// Offer-success threshold once offered; otherwise the cold-start bootstrap:
/// enabled, same source failure, and derived from a real progress gain.
pub fn operator_eligibility(cfg: &GraceConfig, op: &RepairOperator, current_failure: FailureClass) -> bool {
    if op.n_off > 0 {
        op.n_succ_off as f64 / op.n_off as f64 >= cfg.rho
    } else {
        cfg.bootstrap_enabled
            && op.from_failure == current_failure
            && op.progress_gain >= i64::from(cfg.delta_p)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapHint {
    pub text: String,
    pub source_attempt: u32,
    pub ttl: u32,
}

fn prose_name_patterns() -> &'static [Regex; 2] {
    static RE: OnceLock<[Regex; 2]> = OnceLock::new();
    RE.get_or_init(|| {
        [
            Regex::new(r"`([A-Za-z_][A-Za-z0-9_]*)\s*\([^`]*\)`").unwrap(),
            Regex::new(r"(?i)\b(?:function|method)\s+`?([A-Za-z_][A-Za-z0-9_]*)`?").unwrap(),
        ]
    })
}

/// Text of `response` outside fenced blocks.
pub fn prose_outside_fences(response: &str) -> String {
    let mut out = Vec::new();
    let mut inside = false;
    for line in response.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
            continue;
        }
        if !inside {
            out.push(line);
        }
    }
    out.join("\n")
}

/// One hint per function the prose promises but the code does not define.
pub fn gap_hints(response: &str, code: Option<&str>, attempt: u32, ttl: u32) -> Vec<GapHint> {
    let prose = prose_outside_fences(response);
    let code = code.unwrap_or("");
    let mut named = BTreeSet::new();
    let mut ordered = Vec::new();
    for re in prose_name_patterns() {
        for cap in re.captures_iter(&prose) {
            let name = cap[1].to_string();
            if named.insert(name.clone()) {
                ordered.push((cap.get(0).map_or(0, |m| m.start()), name));
            }
        }
    }
    ordered.sort();
    ordered
        .into_iter()
        .filter(|(_, name)| {
            let def = Regex::new(&format!(r"(?m)^\s*(?:async\s+)?(?:def|class)\s+{}\b", regex::escape(name)))
                .expect("escaped");
            !def.is_match(code)
        })
        .map(|(_, name)| GapHint {
            text: bound_text(
                &format!("the previous response described `{name}` but the emitted code does not define it"),
                HINT_TEXT_CAP,
            ),
            source_attempt: attempt,
            ttl,
        })
        .collect()
}

/// Decrements hint lifetimes and drops expired hints.
pub fn age_hints(hints: &mut Vec<GapHint>) {
    for h in hints.iter_mut() {
        h.ttl = h.ttl.saturating_sub(1);
    }
    hints.retain(|h| h.ttl > 0);
}

#[derive(Debug)]
pub struct OperatorStore {
    path: Option<PathBuf>,
    ops: Vec<RepairOperator>,
    next_id: u64,
    clock: u64,
    _lock: Option<WriterLock>,
}

impl OperatorStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            ops: Vec::new(),
            next_id: 1,
            clock: 0,
            _lock: None,
        }
    }

    pub fn open(path: &Path) -> Result<Self> {
        let lock = WriterLock::acquire(path)?;
        let mut store = Self::load(path)?;
        store._lock = Some(lock);
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ops: Vec<RepairOperator> = jsonl::read_all(path)?;
        Ok(Self {
            path: Some(path.to_path_buf()),
            next_id: ops.iter().map(|o| o.id).max().unwrap_or(0) + 1,
            clock: ops.iter().map(|o| o.created_at.max(o.last_offered)).max().unwrap_or(0),
            ops,
            _lock: None,
        })
    }

    pub fn operators(&self) -> &[RepairOperator] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn insert(&mut self, mut op: RepairOperator) -> u64 {
        self.clock += 1;
        op.id = self.next_id;
        op.created_at = self.clock;
        self.next_id += 1;
        self.ops.push(op);
        self.next_id - 1
    }

    pub fn record_outcome(&mut self, offered: &[u64], accepted: bool) {
        if !accepted {
            return;
        }
        for op in self.ops.iter_mut().filter(|o| offered.contains(&o.id)) {
            op.n_succ_off = (op.n_succ_off + 1).min(op.n_off);
        }
    }

    pub fn save(&self) -> Result<()> {
        match (&self.path, &self._lock) {
            (None, _) => Ok(()),
            (Some(_), None) => Err(Error::StorageFailure("operator store opened read-only".into())),
            (Some(path), Some(_)) => jsonl::write_all(path, &self.ops),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Guidance {
    pub blocks: Vec<String>,
    pub offered: Vec<u64>,
}

/// Up to `top_k` eligible operators whose source failure is `prev_failure`,
/// best ratio then most recent first, followed by the live hints. Offered
/// operators have their offer counter incremented.
pub fn compose_guidance(
    cfg: &GraceConfig,
    store: &mut OperatorStore,
    prev_failure: FailureClass,
    hints: &[GapHint],
) -> Guidance {
    let mut candidates: Vec<usize> = store
        .ops
        .iter()
        .enumerate()
        .filter(|(_, o)| o.from_failure == prev_failure && operator_eligibility(cfg, o, prev_failure))
        .map(|(i, _)| i)
        .collect();
    candidates.sort_by(|&a, &b| {
        let (x, y) = (&store.ops[a], &store.ops[b]);
        y.success_ratio()
            .total_cmp(&x.success_ratio())
            .then(y.created_at.max(y.last_offered).cmp(&x.created_at.max(x.last_offered)))
            .then(x.id.cmp(&y.id))
    });
    candidates.truncate(cfg.top_k);
    let mut guidance = Guidance::default();
    if !candidates.is_empty() {
        store.clock += 1;
    }
    for i in candidates {
        let op = &mut store.ops[i];
        op.n_off += 1;
        op.last_offered = store.clock;
        guidance.offered.push(op.id);
        guidance.blocks.push(format!("repair operator #{}: {}", op.id, op.hint_text));
    }
    for h in hints.iter().filter(|h| h.ttl > 0) {
        guidance.blocks.push(format!("gap hint: {}", h.text));
    }
    guidance
}
