//! Controller configuration file (JSON). Every block and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::BanditConfig;
use crate::credit::CreditConfig;
use crate::error::{Error, Result};
use crate::grace::GraceConfig;
use crate::memory::{SimilarityWeights, DEFAULT_RETENTION_CAP, DEFAULT_TRIGRAM_CAP};
use crate::reward::RewardConfig;
use crate::skills::DEFAULT_SKILL_CAP;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodingConfig {
    pub enabled: bool,
    pub seed: u64,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub reward: RewardConfig,
    pub bandit: BanditConfig,
    pub credit: CreditConfig,
    pub grace: GraceConfig,
    pub similarity: SimilarityWeights,
    pub decoding: DecodingConfig,
    pub trigram_cap: usize,
    pub retention_cap: usize,
    pub skill_cap: usize,
    /// Feedback blocks kept in the prompt history.
    pub history_blocks: usize,
    /// Character budget per feedback block.
    pub history_chars: usize,
    /// Byte cap on captured command output.
    pub output_cap: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            reward: RewardConfig::default(),
            bandit: BanditConfig::default(),
            credit: CreditConfig::default(),
            grace: GraceConfig::default(),
            similarity: SimilarityWeights::default(),
            decoding: DecodingConfig::default(),
            trigram_cap: DEFAULT_TRIGRAM_CAP,
            retention_cap: DEFAULT_RETENTION_CAP,
            skill_cap: DEFAULT_SKILL_CAP,
            history_blocks: 2,
            history_chars: 2000,
            output_cap: crate::exec::DEFAULT_OUTPUT_CAP,
        }
    }
}

impl ControllerConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.credit.validate()?;
        self.grace.validate()?;
        self.similarity.validate()?;
        if !(self.bandit.lambda > 0.0) || !(self.bandit.alpha >= 0.0) {
            return Err(Error::InvalidConfig("bandit lambda must be > 0 and alpha >= 0".into()));
        }
        if self.trigram_cap == 0 || self.retention_cap == 0 || self.skill_cap == 0 {
            return Err(Error::InvalidConfig("store caps must be positive".into()));
        }
        if self.output_cap == 0 {
            return Err(Error::InvalidConfig("output cap must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg: ControllerConfig =
            serde_json::from_str(r#"{"reward": {"latency_weight": 0.0}, "grace": {"top_k": 3}}"#)
                .unwrap();
        assert_eq!(cfg.reward.latency_weight, 0.0);
        assert_eq!(cfg.reward.success_bonus, 1.0);
        assert_eq!(cfg.grace.top_k, 3);
        assert_eq!(cfg.bandit.alpha, 0.6);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let mut cfg = ControllerConfig::default();
        cfg.grace.rho = 1.5;
        assert!(cfg.validate().is_err());
    }
}
