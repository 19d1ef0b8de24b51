//! Bounded shaped reward and its pseudo-success mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::validator::ValidationReport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub success_bonus: f64,
    /// Per passed (non-skipped) check.
    pub progress_weight: f64,
    /// Per zero-based attempt index.
    pub attempt_penalty: f64,
    pub extraction_penalty: f64,
    pub behavior_penalty: f64,
    pub latency_weight: f64,
    pub latency_horizon_secs: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            success_bonus: 1.0,
            progress_weight: 0.1,
            attempt_penalty: 0.05,
            extraction_penalty: 0.3,
            behavior_penalty: 0.2,
            latency_weight: 0.1,
            latency_horizon_secs: 120.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.success_bonus,
            self.progress_weight,
            self.attempt_penalty,
            self.extraction_penalty,
            self.behavior_penalty,
            self.latency_weight,
        ];
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("reward weights must be nonnegative".into()));
        }
        if !(self.latency_horizon_secs > 0.0) {
            return Err(Error::InvalidConfig("latency horizon must be positive".into()));
        }
        Ok(())
    }

    /// Value before clipping.
    #[allow(clippy::too_many_arguments)]
    pub fn raw(
        &self,
        accepted: bool,
        passed_count: u32,
        attempt_index: u32,
        extraction_failed: bool,
        behavior_failed: bool,
        duration_secs: f64,
    ) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        let a = ind(accepted);
        self.success_bonus * a + (1.0 - a) * self.progress_weight * f64::from(passed_count)
            - self.attempt_penalty * f64::from(attempt_index)
            - self.extraction_penalty * ind(extraction_failed)
            - self.behavior_penalty * ind(behavior_failed)
            - self.latency_weight * (duration_secs.max(0.0) / self.latency_horizon_secs).min(1.0)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn shaped_reward(
    cfg: &RewardConfig,
    accepted: bool,
    passed_count: u32,
    attempt_index: u32,
    extraction_failed: bool,
    behavior_failed: bool,
    duration_secs: f64,
) -> f64 {
    cfg.raw(
        accepted,
        passed_count,
        attempt_index,
        extraction_failed,
        behavior_failed,
        duration_secs,
    )
    .clamp(-1.0, 1.0)
}

/// Reward for a finished attempt.
pub fn report_reward(
    cfg: &RewardConfig,
    report: &ValidationReport,
    accepted: bool,
    attempt_index: u32,
) -> f64 {
    shaped_reward(
        cfg,
        accepted,
        report.passed_count,
        attempt_index,
        report.extraction_failed,
        report.behavior_failed,
        report.duration_secs,
    )
}

pub fn pseudo_success(reward: f64) -> Result<f64> {
    if !(-1.0..=1.0).contains(&reward) {
        return Err(Error::OutOfRange(reward));
    }
    Ok((reward + 1.0) / 2.0)
}
