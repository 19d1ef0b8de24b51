mod common;

use std::path::Path;

use repairloop::config::ControllerConfig;
use repairloop::orchestrator::{Condition, Controller, Learners, ScriptedGenerator, TaskResult};
use repairloop::validator::{DisabledJudge, FailureClass, Validator};

fn config() -> ControllerConfig {
    let mut cfg = ControllerConfig::default();
    cfg.reward.latency_weight = 0.0;
    cfg
}

/// Writes `responses` as a numbered script and runs the q-learning task once.
fn run(condition: Condition, responses: &[String], learners: &mut Learners, dir: &Path) -> TaskResult {
    let script = dir.join("script");
    std::fs::create_dir_all(&script).unwrap();
    for (i, r) in responses.iter().enumerate() {
        std::fs::write(script.join(format!("{}.txt", i + 1)), r).unwrap();
    }
    let analyzer = common::e2e_analyzer();
    let cfg = config();
    let workspace = dir.join("ws");
    let task = common::load_task("e2e/tasks/q_learning.json", &workspace);
    let validator = Validator::new(common::runner(dir), &analyzer);
    let controller = Controller {
        config: &cfg,
        analyzer: &analyzer,
        validator: &validator,
        judge: &DisabledJudge,
    };
    let mut generator = ScriptedGenerator::new(&script).unwrap();
    let run_dir = dir.join("run");
    controller
        .run_task(&task, condition, &mut generator, learners, Some(&run_dir), "t")
        .unwrap()
}

fn candidate(name: &str) -> String {
    common::fenced(&common::source(&format!("e2e/analyzer/{name}")))
}

#[test]
fn correct_first_response_is_accepted_immediately() {
    let dir = tempfile::tempdir().unwrap();
    let mut learners = Learners::in_memory(&config()).unwrap();
    let res = run(Condition::Mera, &[candidate("q_good")], &mut learners, dir.path());
    assert!(res.accepted);
    assert_eq!(res.attempts, 1);
    assert_eq!(res.failure, None);
    assert_eq!(res.total_score(), 100);
    assert_eq!(res.attempt_log[0].reward, 1.0);
    // The accepted program's two functions enter the library quarantined.
    assert_eq!(learners.skills.len(), 2);
    assert!(learners.skills.skills().iter().all(|s| s.quarantined));
    assert!(dir.path().join("run/result.json").exists());
    assert!(dir.path().join("run/candidates/attempt_1.py").exists());
}

#[test]
fn prose_only_responses_exhaust_the_budget_as_extraction_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut learners = Learners::in_memory(&config()).unwrap();
    let prose = "I would use a dictionary of dictionaries for the table.".to_string();
    let res = run(Condition::RefineB1, &[prose.clone(), prose.clone(), prose], &mut learners, dir.path());
    assert!(!res.accepted);
    assert_eq!(res.attempts, 3);
    assert_eq!(res.failure, Some(FailureClass::Extraction));
    let rewards: Vec<f64> = res.attempt_log.iter().map(|a| a.reward).collect();
    assert_eq!(rewards, vec![-0.3, -0.35, -0.4]);
    assert!(res.attempt_log.iter().all(|a| !a.extracted && a.report.executed_count == 0));
    assert!(!dir.path().join("ws/algorithm.py").exists());
}

#[test]
fn syntax_error_then_fix_dispatches_two_step_credit() {
    let dir = tempfile::tempdir().unwrap();
    let mut learners = Learners::in_memory(&config()).unwrap();
    let res = run(Condition::Mera, &[candidate("q_syntax"), candidate("q_good")], &mut learners, dir.path());
    assert!(res.accepted);
    assert_eq!(res.attempts, 2);
    assert_eq!(res.attempt_log[0].report.primary_failure, FailureClass::Syntax);
    assert_eq!(res.attempt_log[0].reward, 0.0);
    assert_eq!(res.attempt_log[1].reward, 0.95);

    let d = &res.dispatch;
    let pairs: Vec<(usize, usize)> = d.iter().map(|r| (r.source, r.target)).collect();
    assert_eq!(pairs, vec![(0, 0), (0, 1), (1, 1)]);
    assert_eq!(d[0].signal, 0.0);
    assert!((d[1].eligibility - 0.72).abs() < 1e-12);
    assert!((d[1].weight - 0.36).abs() < 1e-12);
    assert!((d[1].signal - 0.36 * 0.95).abs() < 1e-12);
    assert_eq!(d[2].weight, 0.5);
    assert!((d[2].signal - 0.475).abs() < 1e-12);
}

#[test]
fn plain_refinement_learns_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let mut learners = Learners::in_memory(&config()).unwrap();
    let res = run(Condition::RefineB1, &[candidate("q_sem"), candidate("q_good")], &mut learners, dir.path());
    assert!(res.accepted);
    assert!(res.attempt_log.iter().all(|a| a.retrieval_action.name() == "none"));
    assert!(learners.skills.is_empty());
    assert!(learners.operators.is_empty());
    for action in repairloop::bandit::RetrievalAction::ALL {
        assert_eq!(learners.bandit.arm(action).pulls(), 0);
    }
}

#[test]
fn missing_script_is_a_client_error_not_a_crash() {
    let dir = tempfile::tempdir().unwrap();
    let mut learners = Learners::in_memory(&config()).unwrap();
    let res = run(Condition::Grace, &[candidate("q_sem")], &mut learners, dir.path());
    assert!(!res.accepted);
    assert_eq!(res.attempts, 1);
    assert!(res.client_error.is_some());
    assert_eq!(res.failure, Some(FailureClass::Unknown));
}
