//! LinUCB selection over the eight retrieval actions.

use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validator::{FailureClass, ValidationReport};

pub const FEATURE_DIM: usize = 16;
/// Direct re-inversion period for the maintained inverse.
pub const REINVERT_EVERY: u32 = 64;

type Mat = SMatrix<f64, FEATURE_DIM, FEATURE_DIM>;
type Vec16 = SVector<f64, FEATURE_DIM>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrievalAction {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "1_failure_match")]
    OneFailureMatch,
    #[serde(rename = "1_ast_match")]
    OneAstMatch,
    #[serde(rename = "1_failure_1_ast")]
    OneFailureOneAst,
    #[serde(rename = "2_ast_match")]
    TwoAstMatch,
    #[serde(rename = "1_skill_only")]
    OneSkillOnly,
    #[serde(rename = "1_failure_1_skill")]
    OneFailureOneSkill,
    #[serde(rename = "diff_only")]
    DiffOnly,
}

impl RetrievalAction {
    /// Fixed enumeration order; also the tie-break order.
    pub const ALL: [RetrievalAction; 8] = [
        RetrievalAction::None,
        RetrievalAction::OneFailureMatch,
        RetrievalAction::OneAstMatch,
        RetrievalAction::OneFailureOneAst,
        RetrievalAction::TwoAstMatch,
        RetrievalAction::OneSkillOnly,
        RetrievalAction::OneFailureOneSkill,
        RetrievalAction::DiffOnly,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::OneFailureMatch => "1_failure_match",
            Self::OneAstMatch => "1_ast_match",
            Self::OneFailureOneAst => "1_failure_1_ast",
            Self::TwoAstMatch => "2_ast_match",
            Self::OneSkillOnly => "1_skill_only",
            Self::OneFailureOneSkill => "1_failure_1_skill",
            Self::DiffOnly => "diff_only",
        }
    }

    /// (failure matches, AST matches, skills, diff) requested by the action.
    pub fn plan(self) -> (usize, usize, usize, bool) {
        match self {
            Self::None => (0, 0, 0, false),
            Self::OneFailureMatch => (1, 0, 0, false),
            Self::OneAstMatch => (0, 1, 0, false),
            Self::OneFailureOneAst => (1, 1, 0, false),
            Self::TwoAstMatch => (0, 2, 0, false),
            Self::OneSkillOnly => (0, 0, 1, false),
            Self::OneFailureOneSkill => (1, 0, 1, false),
            Self::DiffOnly => (0, 0, 0, true),
        }
    }
}

/// Context vector layout:
///
/// | index  | meaning                                                  |
/// |--------|----------------------------------------------------------|
/// | 0      | bias (1)                                                 |
/// | 1      | attempt index / (budget - 1), 0 for a budget of one      |
/// | 2      | previous passed checks / 6                               |
/// | 3..=11 | previous primary failure one-hot (see [`failure_slot`])  |
/// | 12..=14| previous duration bucket: < 10 s, 10-60 s, > 60 s        |
/// | 15     | a prior candidate file exists                            |
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    fn vector(&self) -> Vec16 {
        Vec16::from_column_slice(&self.0)
    }

    pub fn unit(i: usize) -> Self {
        let mut v = [0.0; FEATURE_DIM];
        v[i] = 1.0;
        Self(v)
    }
}

/// Offset of a failure class within the one-hot block starting at index 3.
pub fn failure_slot(class: FailureClass) -> usize {
    match class {
        FailureClass::Unknown => 0,
        FailureClass::Extraction => 1,
        FailureClass::Syntax => 2,
        FailureClass::UndefinedName => 3,
        FailureClass::SpecContract => 4,
        FailureClass::Import => 5,
        FailureClass::Runtime => 6,
        FailureClass::Type => 7,
        FailureClass::Semantic | FailureClass::Behavior => 8,
    }
}

fn duration_slot(secs: f64) -> usize {
    if secs < 10.0 {
        0
    } else if secs <= 60.0 {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttemptContext<'a> {
    pub attempt_index: u32,
    pub budget: u32,
    pub prev_report: Option<&'a ValidationReport>,
    pub has_current_file: bool,
}

pub fn build_features(ctx: &AttemptContext<'_>) -> FeatureVector {
    let mut v = [0.0; FEATURE_DIM];
    v[0] = 1.0;
    if ctx.budget > 1 {
        v[1] = (f64::from(ctx.attempt_index) / f64::from(ctx.budget - 1)).min(1.0);
    }
    let (progress, class, secs) = match ctx.prev_report {
        Some(r) => (r.passed_count, r.primary_failure, r.duration_secs),
        None => (0, FailureClass::Unknown, 0.0),
    };
    v[2] = (f64::from(progress) / 6.0).min(1.0);
    v[3 + failure_slot(class)] = 1.0;
    v[12 + duration_slot(secs)] = 1.0;
    v[15] = if ctx.has_current_file { 1.0 } else { 0.0 };
    FeatureVector(v)
}

/// Ridge state of one action.
#[derive(Debug, Clone, PartialEq)]
pub struct LinUcbArm {
    a: Mat,
    b: Vec16,
    a_inv: Mat,
    pulls: u64,
    since_reinvert: u32,
}

impl LinUcbArm {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidConfig("ridge lambda must be positive".into()));
        }
        Ok(Self {
            a: Mat::identity() * lambda,
            b: Vec16::zeros(),
            a_inv: Mat::identity() / lambda,
            pulls: 0,
            since_reinvert: 0,
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &Vec16 {
        &self.b
    }

    pub fn a_inv(&self) -> &Mat {
        &self.a_inv
    }

    pub fn pulls(&self) -> u64 {
        self.pulls
    }

    pub fn theta(&self) -> Vec16 {
        self.a_inv * self.b
    }

    /// Exploration bonus term without the alpha factor.
    pub fn width(&self, phi: &FeatureVector) -> Result<f64> {
        let x = phi.vector();
        let q = (x.transpose() * self.a_inv * x)[(0, 0)];
        if !q.is_finite() || q < -1e-12 {
            return Err(Error::NumericalFailure(format!("phi' A^-1 phi = {q}")));
        }
        Ok(q.max(0.0).sqrt())
    }

    pub fn score(&self, phi: &FeatureVector, alpha: f64) -> Result<f64> {
        let mean = self.theta().dot(&phi.vector());
        let s = mean + alpha * self.width(phi)?;
        if s.is_finite() {
            Ok(s)
        } else {
            Err(Error::NumericalFailure(format!("non-finite score {s}")))
        }
    }

    /// `A += w phi phi'`, `b += w r phi`.
    pub fn update(&mut self, phi: &FeatureVector, reward: f64, weight: f64) -> Result<()> {
        if weight < 0.0 || weight.is_nan() {
            return Err(Error::NegativeWeight(weight));
        }
        if !reward.is_finite() || phi.0.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure("non-finite update".into()));
        }
        if weight == 0.0 {
            return Ok(());
        }
        let x = phi.vector();
        self.a += weight * x * x.transpose();
        self.b += weight * reward * x;
        self.pulls += 1;
        self.since_reinvert += 1;
        if self.since_reinvert >= REINVERT_EVERY {
            self.reinvert()?;
        } else {
            // Sherman-Morrison rank-one update.
            let ax = self.a_inv * x;
            let denom = 1.0 + weight * x.dot(&ax);
            self.a_inv -= (weight / denom) * ax * ax.transpose();
        }
        Ok(())
    }

    pub fn reinvert(&mut self) -> Result<()> {
        let chol = self
            .a
            .cholesky()
            .ok_or_else(|| Error::NumericalFailure("A is not positive definite".into()))?;
        self.a_inv = chol.inverse();
        self.since_reinvert = 0;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BanditConfig {
    pub lambda: f64,
    pub alpha: f64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 0.6,
        }
    }
}

/// One arm per retrieval action.
#[derive(Debug, Clone, PartialEq)]
pub struct LinUcb {
    config: BanditConfig,
    arms: Vec<LinUcbArm>,
}

impl LinUcb {
    pub fn new(config: BanditConfig) -> Result<Self> {
        if !(config.alpha >= 0.0) {
            return Err(Error::InvalidConfig("alpha must be nonnegative".into()));
        }
        let arms = RetrievalAction::ALL
            .iter()
            .map(|_| LinUcbArm::new(config.lambda))
            .collect::<Result<_>>()?;
        Ok(Self { config, arms })
    }

    pub fn config(&self) -> BanditConfig {
        self.config
    }

    pub fn arm(&self, action: RetrievalAction) -> &LinUcbArm {
        &self.arms[action.index()]
    }

    pub fn arm_mut(&mut self, action: RetrievalAction) -> &mut LinUcbArm {
        &mut self.arms[action.index()]
    }

    pub fn scores(&self, phi: &FeatureVector) -> Result<[f64; 8]> {
        let mut out = [0.0; 8];
        for (slot, arm) in out.iter_mut().zip(&self.arms) {
            *slot = arm.score(phi, self.config.alpha)?;
        }
        Ok(out)
    }

    /// Highest score wins; the earliest action in enum order wins ties.
    pub fn select(&self, phi: &FeatureVector) -> Result<RetrievalAction> {
        let scores = self.scores(phi)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate().skip(1) {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(RetrievalAction::ALL[best])
    }

    pub fn update(
        &mut self,
        action: RetrievalAction,
        phi: &FeatureVector,
        reward: f64,
        weight: f64,
    ) -> Result<()> {
        self.arm_mut(action).update(phi, reward, weight)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.to_file())?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads saved arms, or fresh arms when the file does not exist.
    pub fn load_or_new(path: &Path, config: BanditConfig) -> Result<Self> {
        if !path.exists() {
            return Self::new(config);
        }
        let file: ArmsFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_file(file, config)
    }

    fn to_file(&self) -> ArmsFile {
        ArmsFile {
            dim: FEATURE_DIM,
            lambda: self.config.lambda,
            arms: RetrievalAction::ALL
                .iter()
                .zip(&self.arms)
                .map(|(action, arm)| ArmFile {
                    action: *action,
                    a: row_major(&arm.a),
                    a_inv: row_major(&arm.a_inv),
                    b: arm.b.iter().copied().collect(),
                    pulls: arm.pulls,
                    since_reinvert: arm.since_reinvert,
                })
                .collect(),
        }
    }

    fn from_file(file: ArmsFile, config: BanditConfig) -> Result<Self> {
        if file.dim != FEATURE_DIM || file.arms.len() != RetrievalAction::ALL.len() {
            return Err(Error::StorageFailure("arm file has the wrong shape".into()));
        }
        let mut bandit = Self::new(BanditConfig {
            lambda: file.lambda,
            ..config
        })?;
        for arm in file.arms {
            let slot = bandit.arm_mut(arm.action);
            if arm.a.len() != FEATURE_DIM * FEATURE_DIM
                || arm.a_inv.len() != FEATURE_DIM * FEATURE_DIM
                || arm.b.len() != FEATURE_DIM
            {
                return Err(Error::StorageFailure("arm matrix has the wrong size".into()));
            }
            slot.a = Mat::from_row_slice(&arm.a);
            slot.a_inv = Mat::from_row_slice(&arm.a_inv);
            slot.b = Vec16::from_column_slice(&arm.b);
            slot.pulls = arm.pulls;
            slot.since_reinvert = arm.since_reinvert;
        }
        Ok(bandit)
    }
}

fn row_major(m: &Mat) -> Vec<f64> {
    (0..FEATURE_DIM)
        .flat_map(|r| (0..FEATURE_DIM).map(move |c| m[(r, c)]))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct ArmsFile {
    dim: usize,
    lambda: f64,
    arms: Vec<ArmFile>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArmFile {
    action: RetrievalAction,
    /// Row-major.
    a: Vec<f64>,
    a_inv: Vec<f64>,
    b: Vec<f64>,
    pulls: u64,
    since_reinvert: u32,
}
