use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::fingerprint::{FailureSignature, Fingerprint};
use crate::analyzer::AstFeatures;
use crate::error::{Error, Result};

const AST_STRUCT_WEIGHT: f64 = 0.70;
const AST_IMPORTS_WEIGHT: f64 = 0.15;
const AST_RETURN_WEIGHT: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimilarityWeights {
    pub token: f64,
    pub ast: f64,
    pub failure: f64,
    pub family: f64,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            token: 0.4,
            ast: 0.3,
            failure: 0.2,
            family: 0.1,
        }
    }
}

impl SimilarityWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.token, self.ast, self.failure, self.family];
        if w.iter().any(|x| !(*x >= 0.0)) || !(w.iter().sum::<f64>() > 0.0) {
            return Err(Error::InvalidConfig(
                "similarity weights must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    fn sum(&self) -> f64 {
        self.token + self.ast + self.failure + self.family
    }
}

/// Jaccard index; two empty sets are identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// Multiset Jaccard: sum of minimum counts over sum of maximum counts.
pub fn multiset_jaccard(a: &[u32], b: &[u32]) -> f64 {
    let count = |xs: &[u32]| {
        let mut m = BTreeMap::new();
        for &x in xs {
            *m.entry(x).or_insert(0u32) += 1;
        }
        m
    };
    let (ca, cb) = (count(a), count(b));
    let keys: BTreeSet<_> = ca.keys().chain(cb.keys()).collect();
    let (mut lo, mut hi) = (0u32, 0u32);
    for k in keys {
        let (x, y) = (ca.get(k).copied().unwrap_or(0), cb.get(k).copied().unwrap_or(0));
        lo += x.min(y);
        hi += x.max(y);
    }
    if hi == 0 {
        1.0
    } else {
        f64::from(lo) / f64::from(hi)
    }
}

fn ratio(x: f64, y: f64) -> f64 {
    let hi = x.max(y);
    if hi == 0.0 {
        1.0
    } else {
        x.min(y) / hi
    }
}

fn numeric_dims(f: &AstFeatures) -> Vec<f64> {
    let b = |v: bool| if v { 1.0 } else { 0.0 };
    vec![
        f64::from(f.function_count),
        f64::from(f.class_count),
        f64::from(f.max_loop_depth),
        f64::from(f.approx_cyclomatic),
        b(f.recursion),
        b(f.class_usage),
        b(f.state_machine),
    ]
}

/// Mean per-dimension min/max ratio over the numeric and flag features.
pub fn structural_similarity(a: &AstFeatures, b: &AstFeatures) -> f64 {
    let mut scores: Vec<f64> = numeric_dims(a)
        .into_iter()
        .zip(numeric_dims(b))
        .map(|(x, y)| ratio(x, y))
        .collect();
    let libs: BTreeSet<&String> = a
        .common_libraries
        .keys()
        .chain(b.common_libraries.keys())
        .collect();
    for lib in libs {
        let get = |f: &AstFeatures| f.common_libraries.get(lib).copied().unwrap_or(false);
        scores.push(if get(a) == get(b) { 1.0 } else { 0.0 });
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

pub fn ast_similarity(a: &AstFeatures, b: &AstFeatures) -> f64 {
    AST_STRUCT_WEIGHT * structural_similarity(a, b)
        + AST_IMPORTS_WEIGHT * jaccard(&a.import_names, &b.import_names)
        + AST_RETURN_WEIGHT * multiset_jaccard(&a.return_arities, &b.return_arities)
}

pub fn failure_similarity(a: &FailureSignature, b: &FailureSignature) -> f64 {
    if a.class != b.class {
        0.0
    } else if a.key == b.key {
        1.0
    } else {
        0.5
    }
}

/// Component scores: token, ast, failure, family.
pub fn components(a: &Fingerprint, b: &Fingerprint) -> [f64; 4] {
    let ta: BTreeSet<_> = a.trigrams.iter().collect();
    let tb: BTreeSet<_> = b.trigrams.iter().collect();
    [
        jaccard(&ta, &tb),
        ast_similarity(&a.ast, &b.ast),
        failure_similarity(&a.failure, &b.failure),
        if a.family == b.family { 1.0 } else { 0.0 },
    ]
}

pub fn combine(parts: [f64; 4], w: &SimilarityWeights) -> f64 {
    let [tok, ast, fail, fam] = parts;
    let s = (w.token * tok + w.ast * ast + w.failure * fail + w.family * fam) / w.sum();
    s.clamp(0.0, 1.0)
}

pub fn similarity(a: &Fingerprint, b: &Fingerprint, w: &SimilarityWeights) -> f64 {
    combine(components(a, b), w)
}
