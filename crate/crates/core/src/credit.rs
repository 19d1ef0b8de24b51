//! Eligibility-trace dispatch of delayed credit to the side learners.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bandit::{FeatureVector, RetrievalAction};
use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreditConfig {
    pub gamma: f64,
    pub lambda_td: f64,
    pub alpha_td: f64,
    /// Symmetric clip bound on the TD delta.
    pub clip: f64,
    pub w_max: f64,
    pub eligibility_floor: f64,
    /// Reserved for a learned value baseline; must stay off.
    pub value_estimator: bool,
}

impl Default for CreditConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda_td: 0.8,
            alpha_td: 0.5,
            clip: 1.0,
            w_max: 0.5,
            eligibility_floor: 1e-3,
            value_estimator: false,
        }
    }
}

impl CreditConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.gamma) || !unit(self.lambda_td) {
            return Err(Error::InvalidConfig("gamma and lambda_td must be in [0, 1]".into()));
        }
        if !(self.alpha_td >= 0.0 && self.clip >= 0.0 && self.w_max >= 0.0)
            || !(self.eligibility_floor >= 0.0)
        {
            return Err(Error::InvalidConfig("credit weights must be nonnegative".into()));
        }
        if self.value_estimator {
            return Err(Error::InvalidConfig("a learned value estimator is not supported".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step_index: usize,
    pub features: FeatureVector,
    pub retrieval_action: RetrievalAction,
    pub decoding_action: Option<usize>,
    pub reward: f64,
    pub attributable_retrieval: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub source: usize,
    pub target: usize,
    pub delta: f64,
    pub eligibility: f64,
    pub weight: f64,
    pub signal: f64,
}

/// TD error with the value baseline fixed at zero: the clipped reward.
pub fn td_delta(cfg: &CreditConfig, reward: f64) -> f64 {
    reward.clamp(-cfg.clip, cfg.clip)
}

/// Receives weighted delayed credit. Both methods default to no-ops.
pub trait CreditSink {
    fn retrieval_credit(&mut self, _step: &TraceStep, _weight: f64, _delta: f64) -> Result<()> {
        Ok(())
    }

    fn decoding_credit(&mut self, _step: &TraceStep, _weight: f64, _delta: f64) -> Result<()> {
        Ok(())
    }
}

/// Sink that discards everything; dispatch records are still produced.
#[derive(Debug, Default)]
pub struct NoSink;

impl CreditSink for NoSink {}

/// Walks the trajectory once. At each target `j` every earlier eligibility
/// decays by `gamma * lambda_td` before step `j` is reinforced; each source
/// at or above the floor then receives `min(w_max, alpha_td * E_i) * delta_j`.
pub fn dispatch_delayed_credit(
    cfg: &CreditConfig,
    trajectory: &[TraceStep],
    sink: &mut dyn CreditSink,
) -> Result<Vec<DispatchRecord>> {
    let decay = cfg.gamma * cfg.lambda_td;
    let mut elig = vec![0.0_f64; trajectory.len()];
    let mut records = Vec::new();
    for (j, target) in trajectory.iter().enumerate() {
        for e in elig.iter_mut().take(j + 1) {
            *e *= decay;
        }
        elig[j] += 1.0;
        let delta = td_delta(cfg, target.reward);
        for (i, source) in trajectory.iter().enumerate().take(j + 1) {
            let e = elig[i];
            if e < cfg.eligibility_floor {
                continue;
            }
            let weight = cfg.w_max.min(cfg.alpha_td * e);
            records.push(DispatchRecord {
                source: i,
                target: j,
                delta,
                eligibility: e,
                weight,
                signal: weight * delta,
            });
            if source.attributable_retrieval {
                sink.retrieval_credit(source, weight, delta)?;
            }
            if source.decoding_action.is_some() {
                sink.decoding_credit(source, weight, delta)?;
            }
        }
    }
    Ok(records)
}

/// Line of the per-run trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub task_id: String,
    pub run: String,
    #[serde(flatten)]
    pub record: DispatchRecord,
}

pub fn append_trace(path: &Path, task_id: &str, run: &str, records: &[DispatchRecord]) -> Result<()> {
    for record in records {
        jsonl::append(
            path,
            &TraceEntry {
                task_id: task_id.to_string(),
                run: run.to_string(),
                record: record.clone(),
            },
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(i: usize, reward: f64) -> TraceStep {
        TraceStep {
            step_index: i,
            features: FeatureVector::unit(0),
            retrieval_action: RetrievalAction::None,
            decoding_action: None,
            reward,
            attributable_retrieval: true,
        }
    }

    #[test]
    fn delta_clips() {
        let cfg = CreditConfig::default();
        assert_eq!(td_delta(&cfg, 0.3), 0.3);
        let half = CreditConfig { clip: 0.5, ..cfg };
        assert_eq!(td_delta(&half, -1.0), -0.5);
        let zero = CreditConfig { clip: 0.0, ..cfg };
        assert_eq!(td_delta(&zero, 0.9), 0.0);
        assert_eq!(td_delta(&zero, -0.9), 0.0);
    }

    #[test]
    fn single_step() {
        let recs = dispatch_delayed_credit(&CreditConfig::default(), &[step(0, 1.0)], &mut NoSink)
            .unwrap();
        assert_eq!(
            recs,
            vec![DispatchRecord {
                source: 0,
                target: 0,
                delta: 1.0,
                eligibility: 1.0,
                weight: 0.5,
                signal: 0.5,
            }]
        );
    }

    #[test]
    fn two_steps() {
        let recs = dispatch_delayed_credit(
            &CreditConfig::default(),
            &[step(0, 0.0), step(1, 1.0)],
            &mut NoSink,
        )
        .unwrap();
        assert_eq!(recs.len(), 3);
        let r01 = &recs[1];
        assert_eq!((r01.source, r01.target), (0, 1));
        assert!((r01.eligibility - 0.72).abs() < 1e-15);
        assert!((r01.weight - 0.36).abs() < 1e-15);
        assert!((r01.signal - 0.36).abs() < 1e-15);
        let r11 = &recs[2];
        assert_eq!((r11.source, r11.target, r11.weight, r11.signal), (1, 1, 0.5, 0.5));
    }

    #[test]
    fn floor_prunes_old_steps() {
        let cfg = CreditConfig {
            eligibility_floor: 0.5,
            ..CreditConfig::default()
        };
        let recs =
            dispatch_delayed_credit(&cfg, &[step(0, 0.0), step(1, 0.0), step(2, 0.0)], &mut NoSink)
                .unwrap();
        // Source 0 carries 1.0, then 0.72, then 0.5184.
        assert!(recs.iter().all(|r| r.eligibility >= 0.5));
        assert_eq!(recs.iter().filter(|r| r.source == 0).count(), 3);
        let cfg = CreditConfig {
            eligibility_floor: 0.6,
            ..cfg
        };
        let recs =
            dispatch_delayed_credit(&cfg, &[step(0, 0.0), step(1, 0.0), step(2, 0.0)], &mut NoSink)
                .unwrap();
        assert_eq!(recs.iter().filter(|r| r.source == 0).count(), 2);
    }

    struct Counting {
        retrieval: Vec<(usize, f64, f64)>,
        decoding: usize,
    }

    impl CreditSink for Counting {
        fn retrieval_credit(&mut self, s: &TraceStep, w: f64, d: f64) -> Result<()> {
            self.retrieval.push((s.step_index, w, d));
            Ok(())
        }
        fn decoding_credit(&mut self, _: &TraceStep, _: f64, _: f64) -> Result<()> {
            self.decoding += 1;
            Ok(())
        }
    }

    #[test]
    fn sinks_follow_attribution() {
        let mut a = step(0, -0.4);
        a.attributable_retrieval = false;
        a.decoding_action = Some(1);
        let b = step(1, 0.8);
        let mut sink = Counting {
            retrieval: vec![],
            decoding: 0,
        };
        let recs = dispatch_delayed_credit(&CreditConfig::default(), &[a, b], &mut sink).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(sink.retrieval, vec![(1, 0.5, 0.8)]);
        assert_eq!(sink.decoding, 2);
    }

    #[test]
    fn empty_trajectory() {
        assert!(dispatch_delayed_credit(&CreditConfig::default(), &[], &mut NoSink)
            .unwrap()
            .is_empty());
    }
}
