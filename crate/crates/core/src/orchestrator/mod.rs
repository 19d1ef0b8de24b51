//! The attempt loop: compose, generate, extract, materialize, validate,
//! reward, learn, and stop on acceptance or an exhausted budget.

mod decoding;
mod generator;
mod prompt;

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use decoding::{default_profiles, BetaPosterior, DecodingBandit};
pub use generator::{
    DecodingProfile, Generator, HttpGenerator, HttpGeneratorConfig, ScriptedGenerator,
    GENERATOR_MODEL_ENV, GENERATOR_URL_ENV,
};
pub use prompt::{compose_prompt, extract_code, report_summary, truncate_chars, History, PromptInputs};

use crate::analyzer::Analyzer;
use crate::bandit::{build_features, AttemptContext, FeatureVector, LinUcb, RetrievalAction};
use crate::config::ControllerConfig;
use crate::credit::{append_trace, dispatch_delayed_credit, CreditSink, DispatchRecord, NoSink, TraceStep};
use crate::error::{Error, Result};
use crate::grace::{
    age_hints, compose_guidance, consolidation_gate, derive_operator, gap_hints, GapHint, Guidance,
    OperatorStore,
};
use crate::jsonl;
use crate::memory::{compute_fingerprint, now_ms, EpisodeRecord, MemoryStore, RetrievalMode};
use crate::reward::{pseudo_success, report_reward};
use crate::skills::{blake2b256_hex, harvest_skills, SkillLibrary, SkillRecord};
use crate::task::TaskSpec;
use crate::validator::{acceptance, validator_pass, FailureClass, Judge, JudgeVerdict, ValidationReport, Validator};

pub const MEMORY_PATH_ENV: &str = "REPAIRLOOP_MEMORY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    /// Plain refinement: no retrieval and no learner updates.
    #[serde(rename = "REFINE_B1")]
    RefineB1,
    #[serde(rename = "MERA")]
    Mera,
    #[serde(rename = "GRACE")]
    Grace,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::RefineB1, Condition::Mera, Condition::Grace];

    pub fn label(self) -> &'static str {
        match self {
            Self::RefineB1 => "REFINE_B1",
            Self::Mera => "MERA",
            Self::Grace => "GRACE",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Self::RefineB1 => "refine",
            Self::Mera => "mera",
            Self::Grace => "grace",
        }
    }

    pub fn learns(self) -> bool {
        self != Self::RefineB1
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "refine" | "refine_b1" => Ok(Self::RefineB1),
            "mera" => Ok(Self::Mera),
            "grace" => Ok(Self::Grace),
            other => Err(Error::InvalidConfig(format!("unknown condition `{other}`"))),
        }
    }
}

/// Everything that learns across tasks.
pub struct Learners {
    pub memory: MemoryStore,
    pub skills: SkillLibrary,
    pub operators: OperatorStore,
    pub bandit: LinUcb,
    pub decoding: Option<DecodingBandit>,
    root: Option<PathBuf>,
}

impl Learners {
    pub fn in_memory(cfg: &ControllerConfig) -> Result<Self> {
        Ok(Self {
            memory: MemoryStore::in_memory(cfg.retention_cap),
            skills: SkillLibrary::in_memory(cfg.skill_cap),
            operators: OperatorStore::in_memory(),
            bandit: LinUcb::new(cfg.bandit)?,
            decoding: decoding_bandit(cfg),
            root: None,
        })
    }

    /// Opens (or creates) every store under `root` as their single writer.
    /// The memory log location can be overridden through the environment.
    pub fn open(root: &Path, cfg: &ControllerConfig) -> Result<Self> {
        let memory_path = std::env::var_os(MEMORY_PATH_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| root.join("memory.jsonl"));
        Self::open_with(root, cfg, &memory_path)
    }

    /// Like [`Learners::open`] but ignores the environment override, so that
    /// separate roots never share a memory log.
    pub fn open_isolated(root: &Path, cfg: &ControllerConfig) -> Result<Self> {
        Self::open_with(root, cfg, &root.join("memory.jsonl"))
    }

    fn open_with(root: &Path, cfg: &ControllerConfig, memory_path: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            memory: MemoryStore::open(memory_path, cfg.retention_cap)?,
            skills: SkillLibrary::open(&root.join("skills.jsonl"), cfg.skill_cap)?,
            operators: OperatorStore::open(&root.join("operators.jsonl"))?,
            bandit: LinUcb::load_or_new(&root.join("arms.json"), cfg.bandit)?,
            decoding: decoding_bandit(cfg),
            root: Some(root.to_path_buf()),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn trace_path(&self) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join("traces.jsonl"))
    }

    pub fn save(&self) -> Result<()> {
        self.skills.save()?;
        self.operators.save()?;
        if let Some(root) = &self.root {
            self.bandit.save(&root.join("arms.json"))?;
        }
        Ok(())
    }
}

fn decoding_bandit(cfg: &ControllerConfig) -> Option<DecodingBandit> {
    cfg.decoding
        .enabled
        .then(|| DecodingBandit::new(default_profiles(), cfg.decoding.seed))
}

/// One line of the attempt log. Wall-clock values are left out so that
/// replays of the same script compare byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub features: FeatureVector,
    pub retrieval_action: RetrievalAction,
    pub attributable: bool,
    pub decoding_profile: Option<String>,
    pub injected_episodes: Vec<u64>,
    pub injected_skills: Vec<String>,
    pub injected_operators: Vec<u64>,
    pub gap_hints: usize,
    pub diff_injected: bool,
    pub prompt_digest: String,
    pub response_digest: String,
    pub extracted: bool,
    pub report: ValidationReport,
    pub judge: JudgeVerdict,
    pub accepted: bool,
    pub reward: f64,
    pub episode_id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub task_id: String,
    pub condition: Condition,
    pub run: String,
    pub accepted: bool,
    pub attempts: u32,
    /// `None` when accepted; `UNKNOWN` for a run cut short by a client error.
    pub failure: Option<FailureClass>,
    pub final_report: Option<ValidationReport>,
    pub accepted_source: Option<String>,
    pub client_error: Option<String>,
    pub attempt_log: Vec<AttemptRecord>,
    pub dispatch: Vec<DispatchRecord>,
    pub duration_secs: f64,
}

impl TaskResult {
    pub fn total_score(&self) -> u32 {
        self.final_report.as_ref().map_or(0, |r| r.total_score)
    }
}

struct LearnerSink<'a> {
    bandit: Option<&'a mut LinUcb>,
    decoding: Option<&'a mut DecodingBandit>,
}

impl CreditSink for LearnerSink<'_> {
    fn retrieval_credit(&mut self, step: &TraceStep, weight: f64, delta: f64) -> Result<()> {
        match self.bandit.as_deref_mut() {
            Some(b) => b.update(step.retrieval_action, &step.features, delta, weight),
            None => Ok(()),
        }
    }

    fn decoding_credit(&mut self, step: &TraceStep, weight: f64, delta: f64) -> Result<()> {
        match (self.decoding.as_deref_mut(), step.decoding_action) {
            (Some(d), Some(profile)) => {
                d.update(profile, pseudo_success(delta.clamp(-1.0, 1.0))?, weight)
            }
            _ => Ok(()),
        }
    }
}

/// Shared, read-only collaborators of the loop.
pub struct Controller<'a> {
    pub config: &'a ControllerConfig,
    pub analyzer: &'a dyn Analyzer,
    pub validator: &'a Validator<'a>,
    pub judge: &'a dyn Judge,
}

struct Retrieved {
    episodes: Vec<EpisodeRecord>,
    skills: Vec<SkillRecord>,
    diff: Option<String>,
}

impl Controller<'_> {
    /// Runs one task. Success is reported only for an attempt whose
    /// validation report (and judge) accepted it.
    ///
    /// A generator failure ends the run as failed with `client_error` set.
    pub fn run_task(
        &self,
        task: &TaskSpec,
        condition: Condition,
        generator: &mut dyn Generator,
        learners: &mut Learners,
        run_dir: Option<&Path>,
        run_label: &str,
    ) -> Result<TaskResult> {
        task.validate()?;
        task.prepare_workspace()?;
        let cfg = self.config;
        let started = Instant::now();
        let family = task.family_label();
        let budget = task.attempts;
        let target = task.target_path();

        let mut current_file: Option<String> = std::fs::read_to_string(&target).ok();
        let mut candidates: Vec<String> = Vec::new();
        let mut prev_report: Option<ValidationReport> = None;
        let mut history = History::default();
        let mut trajectory: Vec<TraceStep> = Vec::new();
        let mut hints: Vec<GapHint> = Vec::new();
        let mut log: Vec<AttemptRecord> = Vec::new();
        let mut client_error = None;
        let mut accepted_source = None;

        for t in 0..budget {
            let prev_failure = prev_report
                .as_ref()
                .map_or(FailureClass::Unknown, |r| r.primary_failure);
            let (p_prev, v_prev) = prev_report
                .as_ref()
                .map_or((0, 0), |r| (r.passed_count, r.total_score));

            let phi = build_features(&AttemptContext {
                attempt_index: t,
                budget,
                prev_report: prev_report.as_ref(),
                has_current_file: current_file.is_some(),
            });
            let decoding_choice = match learners.decoding.as_mut() {
                Some(d) if condition.learns() => Some(d.select()?),
                _ => None,
            };
            let profile = decoding_choice
                .and_then(|i| learners.decoding.as_ref().map(|d| d.profiles()[i].clone()));
            let action = if condition.learns() {
                learners.bandit.select(&phi)?
            } else {
                RetrievalAction::None
            };
            let query = compute_fingerprint(
                self.analyzer,
                &family,
                &task.prompt,
                current_file.as_deref(),
                prev_report.as_ref(),
                cfg.trigram_cap,
            )?;
            let retrieved = self.retrieve(learners, &query, action, &family, &candidates)?;
            let attributable = action == RetrievalAction::None
                || !retrieved.episodes.is_empty()
                || !retrieved.skills.is_empty()
                || retrieved.diff.is_some();
            let guidance = if condition == Condition::Grace {
                compose_guidance(&cfg.grace, &mut learners.operators, prev_failure, &hints)
            } else {
                Guidance::default()
            };

            let episode_refs: Vec<&EpisodeRecord> = retrieved.episodes.iter().collect();
            let bounded_history = history.bounded(cfg.history_blocks, cfg.history_chars);
            let prompt_text = compose_prompt(&PromptInputs {
                task,
                attempt: t,
                current_file: current_file.as_deref(),
                prev_report: prev_report.as_ref(),
                episodes: &episode_refs,
                diff: retrieved.diff.as_deref(),
                skills: &retrieved.skills,
                guidance: &guidance.blocks,
                history: &bounded_history,
            });
            write_artifact(run_dir, "prompts", t, "txt", &prompt_text)?;

            let response = match generator.generate(&prompt_text, profile.as_ref()) {
                Ok(r) => r,
                Err(Error::GeneratorUnreachable(msg)) => {
                    log::warn!("task {}: generator unreachable: {msg}", task.id);
                    client_error = Some(msg);
                    break;
                }
                Err(e) => return Err(e),
            };
            write_artifact(run_dir, "responses", t, "txt", &response)?;

            // The materialized text (newline-terminated) is what every later
            // step sees, so the analyzer always gets the bytes on disk.
            let code = extract_code(&response).map(|mut src| {
                if !src.ends_with('\n') {
                    src.push('\n');
                }
                src
            });
            let report = match &code {
                None => self.validator.run_pipeline(task, &target, true)?,
                Some(body) => {
                    std::fs::write(&target, body)?;
                    write_artifact(run_dir, "candidates", t, "py", body)?;
                    self.validator.run_pipeline(task, &target, false)?
                }
            };
            write_artifact(run_dir, "reports", t, "json", &serde_json::to_string_pretty(&report)?)?;

            let verdict = match &code {
                Some(src) if validator_pass(&report) == 1 => self.judge.judge(task, src, &report),
                _ => JudgeVerdict::Skipped,
            };
            let accepted = acceptance(&report, verdict) == 1;
            let reward = report_reward(&cfg.reward, &report, accepted, t);

            if condition.learns() && attributable {
                learners.bandit.update(action, &phi, reward, 1.0)?;
            }
            if let (Some(d), Some(i)) = (learners.decoding.as_mut(), decoding_choice) {
                d.update(i, pseudo_success(reward)?, 1.0)?;
            }
            let offered_skills: Vec<String> = retrieved.skills.iter().map(|s| s.hash.clone()).collect();
            learners.skills.record_outcome(&offered_skills, accepted);

            if condition == Condition::Grace {
                learners.operators.record_outcome(&guidance.offered, accepted);
                let gate = consolidation_gate(
                    &cfg.grace,
                    accepted,
                    report.passed_count,
                    p_prev,
                    report.total_score,
                    v_prev,
                );
                if let (true, Some(before), Some(after)) = (gate, current_file.as_deref(), code.as_deref()) {
                    let gain = i64::from(report.passed_count) - i64::from(p_prev);
                    if let Some(op) = derive_operator(
                        self.analyzer,
                        before,
                        after,
                        prev_failure,
                        report.primary_failure,
                        gain,
                    )? {
                        learners.operators.insert(op);
                    }
                }
                age_hints(&mut hints);
                hints.extend(gap_hints(&response, code.as_deref(), t, cfg.grace.hint_ttl));
            }

            let episode_id = learners.memory.persist(EpisodeRecord {
                record_id: 0,
                timestamp_ms: now_ms(),
                task_id: task.id.clone(),
                fingerprint: query,
                task_text: task.prompt.clone(),
                candidate_source: code.clone(),
                report: report.clone(),
                reward,
                accepted,
                duration_secs: report.duration_secs,
                decoding_action: profile.as_ref().map(|p| p.name.clone()),
                retrieval_action: action,
            })?;
            trajectory.push(TraceStep {
                step_index: t as usize,
                features: phi,
                retrieval_action: action,
                decoding_action: decoding_choice,
                reward,
                attributable_retrieval: condition.learns() && attributable,
            });
            history.push(format!("attempt {}:\n{}", t + 1, report_summary(&report)));
            log.push(AttemptRecord {
                attempt: t,
                features: phi,
                retrieval_action: action,
                attributable,
                decoding_profile: profile.map(|p| p.name),
                injected_episodes: retrieved.episodes.iter().map(|e| e.record_id).collect(),
                injected_skills: offered_skills,
                injected_operators: guidance.offered.clone(),
                gap_hints: guidance.blocks.len() - guidance.offered.len(),
                diff_injected: retrieved.diff.is_some(),
                prompt_digest: blake2b256_hex(prompt_text.as_bytes()),
                response_digest: blake2b256_hex(response.as_bytes()),
                extracted: code.is_some(),
                report: report.without_timings(),
                judge: verdict,
                accepted,
                reward,
                episode_id,
            });

            if let Some(src) = &code {
                candidates.push(src.clone());
                current_file = Some(src.clone());
            }
            prev_report = Some(report);
            if accepted {
                if condition.learns() {
                    let src = code.as_deref().expect("accepted attempts carry code");
                    let harvested = harvest_skills(self.analyzer, src, &family)?;
                    learners.skills.merge(harvested);
                }
                accepted_source = code;
                break;
            }
        }

        let dispatch = if condition.learns() {
            let mut sink = LearnerSink {
                bandit: Some(&mut learners.bandit),
                decoding: learners.decoding.as_mut(),
            };
            dispatch_delayed_credit(&cfg.credit, &trajectory, &mut sink)?
        } else {
            dispatch_delayed_credit(&cfg.credit, &trajectory, &mut NoSink)?
        };
        if let Some(path) = learners.trace_path() {
            append_trace(&path, &task.id, run_label, &dispatch)?;
        }
        learners.save()?;

        let accepted = accepted_source.is_some();
        let failure = if accepted {
            None
        } else if client_error.is_some() {
            Some(FailureClass::Unknown)
        } else {
            prev_report.as_ref().map(|r| r.primary_failure)
        };
        let result = TaskResult {
            task_id: task.id.clone(),
            condition,
            run: run_label.to_string(),
            accepted,
            attempts: log.len() as u32,
            failure,
            final_report: prev_report,
            accepted_source,
            client_error,
            attempt_log: log,
            dispatch,
            duration_secs: started.elapsed().as_secs_f64(),
        };
        if let Some(dir) = run_dir {
            jsonl::write_all(&dir.join("attempt_log.jsonl"), &result.attempt_log)?;
            jsonl::write_all(&dir.join("dispatch.jsonl"), &result.dispatch)?;
            std::fs::write(dir.join("result.json"), serde_json::to_string_pretty(&result)?)?;
        }
        Ok(result)
    }

    fn retrieve(
        &self,
        learners: &mut Learners,
        query: &crate::memory::Fingerprint,
        action: RetrievalAction,
        family: &str,
        candidates: &[String],
    ) -> Result<Retrieved> {
        let (n_fail, n_ast, n_skill, want_diff) = action.plan();
        let weights = &self.config.similarity;
        let mut episodes: Vec<EpisodeRecord> = Vec::new();
        if n_fail > 0 {
            match learners.memory.retrieve(query, RetrievalMode::FailureMatch, n_fail, weights) {
                Ok(found) => episodes.extend(found.into_iter().map(|s| s.record.clone())),
                Err(Error::EmptyStore) => {}
                Err(e) => return Err(e),
            }
        }
        if n_ast > 0 {
            match learners
                .memory
                .retrieve(query, RetrievalMode::AstMatch, n_ast + episodes.len(), weights)
            {
                Ok(found) => {
                    let fresh: Vec<EpisodeRecord> = found
                        .into_iter()
                        .filter(|s| !episodes.iter().any(|e| e.record_id == s.record.record_id))
                        .take(n_ast)
                        .map(|s| s.record.clone())
                        .collect();
                    episodes.extend(fresh);
                }
                Err(Error::EmptyStore) => {}
                Err(e) => return Err(e),
            }
        }
        let skills = if n_skill > 0 {
            match learners.skills.select(family, n_skill) {
                Ok(s) => s,
                Err(Error::EmptyLibrary) => Vec::new(),
                Err(e) => return Err(e),
            }
        } else {
            Vec::new()
        };
        let diff = match (want_diff, candidates) {
            (true, [.., before, after]) if before != after => Some(
                similar::TextDiff::from_lines(before, after)
                    .unified_diff()
                    .context_radius(3)
                    .header("previous", "latest")
                    .to_string(),
            ),
            _ => None,
        };
        Ok(Retrieved {
            episodes,
            skills,
            diff,
        })
    }
}

fn write_artifact(dir: Option<&Path>, kind: &str, attempt: u32, ext: &str, text: &str) -> Result<()> {
    if let Some(dir) = dir {
        let sub = dir.join(kind);
        std::fs::create_dir_all(&sub)?;
        std::fs::write(sub.join(format!("attempt_{}.{ext}", attempt + 1)), text)?;
    }
    Ok(())
}
