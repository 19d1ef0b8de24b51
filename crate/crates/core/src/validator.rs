//! Fail-fast validation of a materialized candidate file.
//!
//! The report produced here is the only thing that decides acceptance.

use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::analyzer::Analyzer;
use crate::error::{Error, Result};
use crate::exec::{bound_text, ensure_inside, BoundedRunner, CommandSpec, DEFAULT_OUTPUT_CAP};
use crate::task::{InterfaceKind, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Stage {
    Syntax,
    UndefinedName,
    SpecContract,
    Import,
    Runtime,
    Behavior,
}

impl Stage {
    /// Canonical fail-fast order.
    pub const ORDER: [Stage; 6] = [
        Stage::Syntax,
        Stage::UndefinedName,
        Stage::SpecContract,
        Stage::Import,
        Stage::Runtime,
        Stage::Behavior,
    ];

    /// Points toward the report's total score; deeper stages weigh more.
    pub fn points(self) -> u32 {
        match self {
            Stage::Syntax | Stage::UndefinedName | Stage::Import => 10,
            Stage::SpecContract => 20,
            Stage::Runtime | Stage::Behavior => 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Passed,
    Failed,
    Skipped,
}

/// `UNKNOWN` means no failure was observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureClass {
    Unknown,
    Extraction,
    Syntax,
    UndefinedName,
    SpecContract,
    Import,
    Runtime,
    Type,
    Semantic,
    Behavior,
}

impl FailureClass {
    pub const ALL: [FailureClass; 10] = [
        FailureClass::Unknown,
        FailureClass::Extraction,
        FailureClass::Syntax,
        FailureClass::UndefinedName,
        FailureClass::SpecContract,
        FailureClass::Import,
        FailureClass::Runtime,
        FailureClass::Type,
        FailureClass::Semantic,
        FailureClass::Behavior,
    ];

    /// Short code used in tables.
    pub fn code(self) -> &'static str {
        match self {
            FailureClass::Unknown => "UNK",
            FailureClass::Extraction => "EXT",
            FailureClass::Syntax => "SYN",
            FailureClass::UndefinedName => "UND",
            FailureClass::SpecContract => "SPEC",
            FailureClass::Import => "IMP",
            FailureClass::Runtime => "RUN",
            FailureClass::Type => "TYPE",
            FailureClass::Semantic => "SEM",
            FailureClass::Behavior => "BEH",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub stage: Stage,
    pub outcome: Outcome,
    pub detail: String,
    pub duration_secs: f64,
}

impl CheckResult {
    pub fn new(stage: Stage, outcome: Outcome, detail: impl Into<String>) -> Self {
        Self {
            stage,
            outcome,
            detail: detail.into(),
            duration_secs: 0.0,
        }
    }

    pub fn passed(stage: Stage) -> Self {
        Self::new(stage, Outcome::Passed, "")
    }

    pub fn skipped(stage: Stage) -> Self {
        Self::new(stage, Outcome::Skipped, "not applicable")
    }

    pub fn failed(stage: Stage, detail: impl Into<String>) -> Self {
        Self::new(stage, Outcome::Failed, detail)
    }

    /// 1 when the check passed or was skipped.
    pub fn indicator(&self) -> u32 {
        u32::from(self.outcome != Outcome::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub primary_failure: FailureClass,
    /// Non-skipped passes.
    pub passed_count: u32,
    /// Checks executed or explicitly skipped.
    pub executed_count: u32,
    pub duration_secs: f64,
    pub behavior_failed: bool,
    pub extraction_failed: bool,
    pub total_score: u32,
    /// Sum of points over the stages that were not skipped.
    pub max_score: u32,
}

fn type_error_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\bTypeError\b").unwrap())
}

fn wrong_output_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bAssertionError\b|wrong output|mismatch|\bexpected\b.*\bgot\b").unwrap()
    })
}

fn error_token_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Za-z_][A-Za-z0-9_]*(?:Error|Exception)\b").unwrap())
}

/// Maps a failed stage and its diagnostics onto the failure taxonomy.
pub fn classify_failure(stage: Stage, detail: &str) -> FailureClass {
    match stage {
        Stage::Syntax => FailureClass::Syntax,
        Stage::UndefinedName => FailureClass::UndefinedName,
        Stage::SpecContract => FailureClass::SpecContract,
        Stage::Import => FailureClass::Import,
        Stage::Runtime if type_error_pattern().is_match(detail) => FailureClass::Type,
        Stage::Runtime => FailureClass::Runtime,
        Stage::Behavior if wrong_output_pattern().is_match(detail) => FailureClass::Semantic,
        Stage::Behavior => FailureClass::Behavior,
    }
}

impl ValidationReport {
    /// Derives every summary field from the check list.
    pub fn from_checks(checks: Vec<CheckResult>, duration: Duration) -> Self {
        let failed = checks.iter().find(|c| c.outcome == Outcome::Failed);
        let primary_failure = failed
            .map(|c| classify_failure(c.stage, &c.detail))
            .unwrap_or(FailureClass::Unknown);
        let passed: Vec<_> = checks
            .iter()
            .filter(|c| c.outcome == Outcome::Passed)
            .collect();
        Self {
            primary_failure,
            passed_count: passed.len() as u32,
            executed_count: checks.len() as u32,
            duration_secs: duration.as_secs_f64(),
            behavior_failed: failed.is_some_and(|c| c.stage == Stage::Behavior),
            extraction_failed: false,
            total_score: passed.iter().map(|c| c.stage.points()).sum(),
            max_score: checks
                .iter()
                .filter(|c| c.outcome != Outcome::Skipped)
                .map(|c| c.stage.points())
                .sum(),
            checks,
        }
    }

    /// Report for a response that yielded no code.
    pub fn extraction_failure() -> Self {
        Self {
            checks: Vec::new(),
            primary_failure: FailureClass::Extraction,
            passed_count: 0,
            executed_count: 0,
            duration_secs: 0.0,
            behavior_failed: false,
            extraction_failed: true,
            total_score: 0,
            max_score: 0,
        }
    }

    pub fn failed_check(&self) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.outcome == Outcome::Failed)
    }

    /// Normalized key of the failure: the first error-type token of the failed
    /// check's diagnostics, else its first word.
    pub fn diagnostic_key(&self) -> String {
        let Some(check) = self.failed_check() else {
            return String::new();
        };
        if let Some(m) = error_token_pattern().find(&check.detail) {
            return m.as_str().to_string();
        }
        check
            .detail
            .split(|c: char| !(c.is_alphanumeric() || c == '_'))
            .find(|w| !w.is_empty())
            .unwrap_or_default()
            .to_lowercase()
    }

    /// Copy with all wall-clock fields zeroed, for replay comparisons.
    pub fn without_timings(&self) -> Self {
        let mut copy = self.clone();
        copy.duration_secs = 0.0;
        for c in &mut copy.checks {
            c.duration_secs = 0.0;
        }
        copy
    }

    /// Checks the structural invariants; returns the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let order: Vec<Stage> = self.checks.iter().map(|c| c.stage).collect();
        let mut pos = 0;
        for stage in &order {
            match Stage::ORDER[pos..].iter().position(|s| s == stage) {
                Some(off) => pos += off + 1,
                None => return Err(format!("stage {stage:?} out of order")),
            }
        }
        let failed: Vec<usize> = self
            .checks
            .iter()
            .enumerate()
            .filter(|(_, c)| c.outcome == Outcome::Failed)
            .map(|(i, _)| i)
            .collect();
        if failed.len() > 1 {
            return Err("more than one failed check".into());
        }
        if let Some(&i) = failed.first() {
            if i + 1 != self.checks.len() {
                return Err("failed check is not the last executed".into());
            }
        }
        let unknown = self.primary_failure == FailureClass::Unknown;
        if unknown != (failed.is_empty() && !self.extraction_failed) {
            return Err("primary failure inconsistent with checks".into());
        }
        let passed = self
            .checks
            .iter()
            .filter(|c| c.outcome == Outcome::Passed)
            .count() as u32;
        if passed != self.passed_count {
            return Err("passed_count does not match checks".into());
        }
        if self.executed_count != self.checks.len() as u32 || self.passed_count > self.executed_count
        {
            return Err("executed_count inconsistent".into());
        }
        if self.checks.iter().any(|c| c.duration_secs < 0.0) {
            return Err("negative check duration".into());
        }
        Ok(())
    }
}

/// 1 iff every recorded check passed or was skipped and no failure class is set.
pub fn validator_pass(report: &ValidationReport) -> u8 {
    let all = report.checks.iter().all(|c| c.indicator() == 1);
    u8::from(all && report.primary_failure == FailureClass::Unknown)
}

/// Verdict of the optional post-validation judge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JudgeVerdict {
    Disabled,
    Skipped,
    Pass,
    Uncertain,
    LowConfidenceFail,
    HighConfidenceFail,
}

impl JudgeVerdict {
    pub const ALL: [JudgeVerdict; 6] = [
        JudgeVerdict::Disabled,
        JudgeVerdict::Skipped,
        JudgeVerdict::Pass,
        JudgeVerdict::Uncertain,
        JudgeVerdict::LowConfidenceFail,
        JudgeVerdict::HighConfidenceFail,
    ];

    /// 0 only for a high-confidence failure.
    pub fn indicator(self) -> u8 {
        u8::from(self != JudgeVerdict::HighConfidenceFail)
    }
}

/// Post-validation veto gate. It is consulted only for validator-passing
/// candidates and can never turn a failure into a success.
pub trait Judge {
    fn judge(&self, task: &TaskSpec, source: &str, report: &ValidationReport) -> JudgeVerdict;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DisabledJudge;

impl Judge for DisabledJudge {
    fn judge(&self, _: &TaskSpec, _: &str, _: &ValidationReport) -> JudgeVerdict {
        JudgeVerdict::Disabled
    }
}

pub fn acceptance(report: &ValidationReport, verdict: JudgeVerdict) -> u8 {
    validator_pass(report) * verdict.indicator()
}

/// Diagnostic progress cost; never used for acceptance.
pub fn stage_cost(report: &ValidationReport) -> f64 {
    if report.checks.is_empty() {
        return 1.0;
    }
    let ok: u32 = report.checks.iter().map(CheckResult::indicator).sum();
    1.0 - f64::from(ok) / report.checks.len() as f64
}

/// Runs the six-stage fail-fast pipeline.
pub struct Validator<'a> {
    runner: BoundedRunner,
    analyzer: &'a dyn Analyzer,
    output_cap: usize,
}

impl<'a> Validator<'a> {
    /// `runner` supplies the allowlist; each pipeline re-roots it at the task workspace.
    pub fn new(runner: BoundedRunner, analyzer: &'a dyn Analyzer) -> Self {
        Self {
            runner,
            analyzer,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    pub fn with_output_cap(mut self, cap: usize) -> Self {
        self.output_cap = cap;
        self
    }

    pub fn output_cap(&self) -> usize {
        self.output_cap
    }

    pub fn run_pipeline(
        &self,
        task: &TaskSpec,
        candidate_path: &Path,
        extraction_failed: bool,
    ) -> Result<ValidationReport> {
        if extraction_failed {
            return Ok(ValidationReport::extraction_failure());
        }
        let path = ensure_inside(&task.workspace, candidate_path)?;
        let source = std::fs::read_to_string(&path)?;
        let runner = self.runner.rooted_at(&task.workspace);
        let started = Instant::now();
        let mut checks = Vec::with_capacity(Stage::ORDER.len());
        for stage in Stage::ORDER {
            if !task.applies(stage) {
                checks.push(CheckResult::skipped(stage));
                continue;
            }
            let t0 = Instant::now();
            let mut check = self.run_stage(&runner, task, stage, &source)?;
            check.detail = bound_text(&sanitize(&check.detail, &task.workspace), self.output_cap);
            check.duration_secs = t0.elapsed().as_secs_f64();
            let stop = check.outcome == Outcome::Failed;
            checks.push(check);
            if stop {
                break;
            }
        }
        Ok(ValidationReport::from_checks(checks, started.elapsed()))
    }

    fn run_stage(
        &self,
        runner: &BoundedRunner,
        task: &TaskSpec,
        stage: Stage,
        source: &str,
    ) -> Result<CheckResult> {
        match stage {
            Stage::UndefinedName => match self.analyzer.undefined_names(source) {
                Ok(names) if names.is_empty() => Ok(CheckResult::passed(stage)),
                Ok(names) => {
                    let listed: Vec<String> = names
                        .iter()
                        .map(|n| format!("undefined name `{}` (line {})", n.name, n.line))
                        .collect();
                    Ok(CheckResult::failed(stage, listed.join("\n")))
                }
                Err(Error::ParseFailure(msg)) => Ok(CheckResult::failed(stage, msg)),
                Err(e) => Err(unavailable(e)),
            },
            Stage::SpecContract => match self.analyzer.units(source) {
                Ok(units) => {
                    let problems = contract_violations(task, &units);
                    if problems.is_empty() {
                        Ok(CheckResult::passed(stage))
                    } else {
                        Ok(CheckResult::failed(stage, problems.join("\n")))
                    }
                }
                Err(Error::ParseFailure(msg)) => Ok(CheckResult::failed(stage, msg)),
                Err(e) => Err(unavailable(e)),
            },
            _ => {
                let argv = task.command_for(stage).ok_or_else(|| {
                    Error::InvalidConfig(format!("no command for stage {stage:?}"))
                })?;
                let (program, args) = argv
                    .split_first()
                    .ok_or_else(|| Error::InvalidConfig(format!("empty command for {stage:?}")))?;
                let cmd = CommandSpec::new(program.clone(), &task.workspace)
                    .args(args.iter().cloned())
                    .timeout(task.timeout())
                    .output_cap(self.output_cap);
                match runner.run(&cmd) {
                    Ok(out) if out.success() => Ok(CheckResult::passed(stage)),
                    Ok(out) => {
                        let mut detail = out.combined();
                        if detail.trim().is_empty() {
                            detail = format!("exit status {:?}", out.exit_code);
                        }
                        Ok(CheckResult::failed(stage, detail))
                    }
                    Err(Error::Timeout { timeout_secs, .. }) => Ok(CheckResult::failed(
                        stage,
                        format!("timed out after {timeout_secs:.1}s"),
                    )),
                    Err(e) => Err(e),
                }
            }
        }
    }
}

fn unavailable(e: Error) -> Error {
    match e {
        Error::AnalyzerUnavailable(_) => e,
        other => Error::AnalyzerUnavailable(other.to_string()),
    }
}

/// Interface obligations of `task` not met by the extracted units.
pub fn contract_violations(task: &TaskSpec, units: &[crate::analyzer::Unit]) -> Vec<String> {
    let mut problems = Vec::new();
    for item in &task.interface {
        match item.kind {
            InterfaceKind::Function => {
                match units.iter().find(|u| u.qualified_name == item.name) {
                    None => problems.push(format!("missing function `{}`", item.name)),
                    Some(u) => {
                        if let Some(arity) = item.arity {
                            if u.params.len() != arity {
                                problems.push(format!(
                                    "`{}` takes {} parameters, expected {}",
                                    item.name,
                                    u.params.len(),
                                    arity
                                ));
                            }
                        }
                    }
                }
            }
            InterfaceKind::Class => {
                let prefix = format!("{}.", item.name);
                let methods: Vec<_> = units
                    .iter()
                    .filter(|u| u.qualified_name.starts_with(&prefix))
                    .collect();
                if methods.is_empty() {
                    problems.push(format!("missing class `{}`", item.name));
                } else if let Some(arity) = item.arity {
                    let init = format!("{}.__init__", item.name);
                    let got = methods
                        .iter()
                        .find(|u| u.qualified_name == init)
                        .map_or(1, |u| u.params.len());
                    if got != arity {
                        problems.push(format!(
                            "`{init}` takes {got} parameters, expected {arity}"
                        ));
                    }
                }
            }
        }
    }
    problems
}

/// Replaces absolute workspace paths so diagnostics are location independent.
fn sanitize(text: &str, workspace: &Path) -> String {
    let mut out = text.to_string();
    let mut paths = vec![workspace.to_path_buf()];
    if let Ok(c) = workspace.canonicalize() {
        paths.push(c);
    }
    paths.sort_by_key(|p| std::cmp::Reverse(p.as_os_str().len()));
    for p in paths {
        if let Some(s) = p.to_str().filter(|s| !s.is_empty()) {
            out = out.replace(s, "<workspace>");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(outcomes: &[(Stage, Outcome)]) -> ValidationReport {
        let checks = outcomes
            .iter()
            .map(|&(s, o)| CheckResult::new(s, o, if o == Outcome::Failed { "boom" } else { "" }))
            .collect();
        ValidationReport::from_checks(checks, Duration::ZERO)
    }

    fn all_pass() -> ValidationReport {
        report(&Stage::ORDER.map(|s| (s, Outcome::Passed)))
    }

    #[test]
    fn validator_pass_cases() {
        assert_eq!(validator_pass(&all_pass()), 1);
        let mut stages = Stage::ORDER.map(|s| (s, Outcome::Passed)).to_vec();
        stages[5].1 = Outcome::Failed;
        assert_eq!(validator_pass(&report(&stages)), 0);
        stages[5].1 = Outcome::Skipped;
        assert_eq!(validator_pass(&report(&stages)), 1);
        assert_eq!(validator_pass(&ValidationReport::extraction_failure()), 0);
    }

    #[test]
    fn acceptance_cases() {
        let pass = all_pass();
        assert_eq!(acceptance(&pass, JudgeVerdict::Disabled), 1);
        assert_eq!(acceptance(&pass, JudgeVerdict::HighConfidenceFail), 0);
        let fail = report(&[(Stage::Syntax, Outcome::Failed)]);
        assert_eq!(acceptance(&fail, JudgeVerdict::Pass), 0);
    }

    #[test]
    fn stage_cost_cases() {
        assert_eq!(stage_cost(&all_pass()), 0.0);
        let r = report(&[
            (Stage::Syntax, Outcome::Passed),
            (Stage::UndefinedName, Outcome::Passed),
            (Stage::SpecContract, Outcome::Passed),
            (Stage::Import, Outcome::Failed),
        ]);
        assert!((stage_cost(&r) - 0.25).abs() < 1e-12);
        assert_eq!(stage_cost(&ValidationReport::extraction_failure()), 1.0);
    }

    #[test]
    fn classification_refines_runtime_and_behavior() {
        assert_eq!(
            classify_failure(Stage::Runtime, "TypeError: unsupported operand"),
            FailureClass::Type
        );
        assert_eq!(
            classify_failure(Stage::Runtime, "ZeroDivisionError: division by zero"),
            FailureClass::Runtime
        );
        assert_eq!(
            classify_failure(Stage::Behavior, "AssertionError: expected 1.0 got 0.5"),
            FailureClass::Semantic
        );
        assert_eq!(
            classify_failure(Stage::Behavior, "timed out after 5.0s"),
            FailureClass::Behavior
        );
    }

    #[test]
    fn score_and_flags() {
        let r = all_pass();
        assert_eq!((r.total_score, r.max_score), (100, 100));
        let mut stages = Stage::ORDER.map(|s| (s, Outcome::Passed)).to_vec();
        stages[5] = (Stage::Behavior, Outcome::Skipped);
        let r = report(&stages);
        assert_eq!((r.total_score, r.max_score), (75, 75));
        stages[5] = (Stage::Behavior, Outcome::Failed);
        let r = report(&stages);
        assert!(r.behavior_failed);
        assert_eq!(r.passed_count, 5);
        assert_eq!(r.total_score, 75);
    }

    #[test]
    fn diagnostic_key_prefers_error_token() {
        let r = report(&[
            (Stage::Syntax, Outcome::Passed),
            (Stage::UndefinedName, Outcome::Passed),
            (Stage::SpecContract, Outcome::Passed),
            (Stage::Import, Outcome::Passed),
        ]);
        assert_eq!(r.diagnostic_key(), "");
        let mut checks = r.checks.clone();
        checks.push(CheckResult::failed(
            Stage::Runtime,
            "Traceback (most recent call last):\nZeroDivisionError: division by zero",
        ));
        let r = ValidationReport::from_checks(checks, Duration::ZERO);
        assert_eq!(r.diagnostic_key(), "ZeroDivisionError");
        let r = report(&[(Stage::Syntax, Outcome::Passed), (Stage::UndefinedName, Outcome::Failed)]);
        assert_eq!(r.diagnostic_key(), "boom");
    }

    #[test]
    fn invariants_detect_disorder() {
        let mut r = all_pass();
        assert!(r.check_invariants().is_ok());
        r.checks.swap(0, 1);
        assert!(r.check_invariants().is_err());
        assert!(ValidationReport::extraction_failure().check_invariants().is_ok());
    }

    #[test]
    fn sanitize_strips_workspace() {
        let dir = tempfile::tempdir().unwrap();
        let text = format!("File \"{}/algorithm.py\", line 3", dir.path().display());
        assert_eq!(
            sanitize(&text, dir.path()),
            "File \"<workspace>/algorithm.py\", line 3"
        );
    }
}
