#![allow(dead_code)]

use std::path::{Path, PathBuf};

use repairloop::analyzer::FixtureAnalyzer;
use repairloop::exec::{Allowlist, BoundedRunner};
use repairloop::task::TaskSpec;
use repairloop::validator::{FailureClass, ValidationReport, Validator};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn analyzer_fixtures() -> FixtureAnalyzer {
    FixtureAnalyzer::load_dir(&fixtures().join("analyzer")).expect("analyzer fixtures")
}

pub fn e2e_analyzer() -> FixtureAnalyzer {
    FixtureAnalyzer::load_dir(&fixtures().join("e2e/analyzer")).expect("e2e fixtures")
}

/// Source text of a recorded fixture, e.g. `analyzer/skill_base`.
pub fn source(rel: &str) -> String {
    std::fs::read_to_string(fixtures().join(rel).join("source.py")).expect("fixture source")
}

pub fn runner(root: &Path) -> BoundedRunner {
    BoundedRunner::new(Allowlist::default(), root)
}

pub fn load_task(rel: &str, workspace: &Path) -> TaskSpec {
    TaskSpec::load(&fixtures().join(rel))
        .expect("task")
        .with_workspace(workspace)
}

/// Validates the named pipeline candidate in a fresh workspace.
pub fn validate_candidate(analyzer: &FixtureAnalyzer, name: &str) -> ValidationReport {
    let dir = tempfile::tempdir().unwrap();
    let task = load_task("pipeline/task.json", dir.path());
    task.prepare_workspace().unwrap();
    std::fs::write(task.target_path(), source(&format!("analyzer/{name}"))).unwrap();
    let validator = Validator::new(runner(dir.path()), analyzer);
    validator
        .run_pipeline(&task, &task.target_path(), false)
        .expect("pipeline")
}

/// Response of a scripted replay: a fenced block around `code`.
pub fn fenced(code: &str) -> String {
    format!("Here is the update.\n\n```python\n{code}```\n")
}

/// (candidate, executed stages, primary failure, total score).
pub const PIPELINE_CASES: &[(&str, u32, FailureClass, u32)] = &[
    ("pipe_syntax_error", 1, FailureClass::Syntax, 0),
    ("pipe_undefined_name", 2, FailureClass::UndefinedName, 10),
    ("pipe_contract_violation", 3, FailureClass::SpecContract, 20),
    ("pipe_bad_import", 4, FailureClass::Import, 40),
    ("pipe_runtime_crash", 5, FailureClass::Runtime, 50),
    ("pipe_type_error", 5, FailureClass::Type, 50),
    ("pipe_behavior_failure", 6, FailureClass::Semantic, 75),
    ("pipe_behavior_exit", 6, FailureClass::Behavior, 75),
    ("pipe_full_pass", 6, FailureClass::Unknown, 100),
];

/// Checks one report against its row; returns a description of the mismatch.
pub fn check_pipeline_case(
    report: &ValidationReport,
    executed: u32,
    class: FailureClass,
    score: u32,
) -> Result<(), String> {
    use repairloop::validator::{Outcome, Stage};
    report.check_invariants()?;
    let stages: Vec<Stage> = report.checks.iter().map(|c| c.stage).collect();
    if stages[..] != Stage::ORDER[..executed as usize] {
        return Err(format!("executed prefix {stages:?}"));
    }
    let failed = class != FailureClass::Unknown;
    let expected_passed = if failed { executed - 1 } else { executed };
    if report.passed_count != expected_passed {
        return Err(format!("passed_count {}", report.passed_count));
    }
    if failed && report.checks.last().map(|c| c.outcome) != Some(Outcome::Failed) {
        return Err("last executed check did not fail".into());
    }
    if report.primary_failure != class {
        return Err(format!("class {:?}", report.primary_failure));
    }
    if report.total_score != score {
        return Err(format!("total_score {}", report.total_score));
    }
    Ok(())
}
