use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::analyzer::{Analyzer, AstFeatures};
use crate::error::{Error, Result};
use crate::validator::{FailureClass, ValidationReport};

pub const DEFAULT_TRIGRAM_CAP: usize = 256;

pub type Trigram = [String; 3];

/// Keyword table for coarse task families, checked in order.
const FAMILY_KEYWORDS: &[(&str, &[&str])] = &[
    ("q_learning", &["q-learning", "q learning", "qlearning", "q_learning"]),
    ("sarsa", &["sarsa"]),
    ("value_iteration", &["value iteration", "value-iteration", "value_iteration"]),
    ("policy_iteration", &["policy iteration", "policy-iteration", "policy_iteration"]),
    ("td_learning", &["temporal difference", "temporal-difference", "td(", "td learning"]),
    ("monte_carlo", &["monte carlo", "monte-carlo"]),
    ("bandit", &["bandit", "ucb", "thompson"]),
    ("policy_gradient", &["policy gradient", "reinforce"]),
];

pub const GENERIC_FAMILY: &str = "generic";

pub fn task_family(text: &str) -> String {
    let lower = text.to_lowercase();
    FAMILY_KEYWORDS
        .iter()
        .find(|(_, keys)| keys.iter().any(|k| lower.contains(k)))
        .map_or(GENERIC_FAMILY, |(family, _)| family)
        .to_string()
}

/// Lowercased word-token 3-grams, deduplicated in first-occurrence order and
/// truncated to `cap`. Windows do not cross sentence boundaries (`.`, `!`,
/// `?`, `;` or a newline).
pub fn token_trigrams(text: &str, cap: usize) -> Vec<Trigram> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for sentence in text.split(['.', '!', '?', ';', '\n']) {
        let tokens: Vec<String> = sentence
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect();
        for w in tokens.windows(3) {
            if out.len() >= cap {
                return out;
            }
            let tri: Trigram = [w[0].clone(), w[1].clone(), w[2].clone()];
            if seen.insert(tri.clone()) {
                out.push(tri);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FailureSignature {
    pub class: FailureClass,
    pub key: String,
}

impl FailureSignature {
    pub fn none() -> Self {
        Self {
            class: FailureClass::Unknown,
            key: String::new(),
        }
    }

    pub fn of(report: &ValidationReport) -> Self {
        Self {
            class: report.primary_failure,
            key: report.diagnostic_key(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComplexityBucket {
    Low,
    Med,
    High,
}

impl ComplexityBucket {
    pub fn of(approx_cyclomatic: u32) -> Self {
        match approx_cyclomatic {
            0..=5 => Self::Low,
            6..=15 => Self::Med,
            _ => Self::High,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub family: String,
    pub trigrams: Vec<Trigram>,
    pub ast: AstFeatures,
    pub failure: FailureSignature,
    pub bucket: ComplexityBucket,
}

/// Fingerprint of a task, an optional source file and an optional report.
///
/// A source the analyzer cannot parse contributes empty features, like an
/// absent one; an unreachable analyzer is an error.
pub fn compute_fingerprint(
    analyzer: &dyn Analyzer,
    family: &str,
    task_text: &str,
    source: Option<&str>,
    report: Option<&ValidationReport>,
    trigram_cap: usize,
) -> Result<Fingerprint> {
    let ast = match source.filter(|s| !s.trim().is_empty()) {
        None => AstFeatures::default(),
        Some(src) => match analyzer.features(src) {
            Ok(f) => f,
            Err(Error::ParseFailure(msg)) => {
                log::debug!("fingerprint: unparseable source ({msg}); using empty features");
                AstFeatures::default()
            }
            Err(Error::AnalyzerUnavailable(m)) => return Err(Error::AnalyzerUnavailable(m)),
            Err(other) => return Err(Error::AnalyzerUnavailable(other.to_string())),
        },
    };
    Ok(Fingerprint {
        family: family.to_string(),
        trigrams: token_trigrams(task_text, trigram_cap),
        bucket: ComplexityBucket::of(ast.approx_cyclomatic),
        ast,
        failure: report.map_or_else(FailureSignature::none, FailureSignature::of),
    })
}
