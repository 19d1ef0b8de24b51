mod common;

use repairloop::validator::{stage_cost, validator_pass, FailureClass, Outcome};

#[test]
fn every_candidate_stops_at_its_first_failing_stage() {
    let analyzer = common::analyzer_fixtures();
    for &(name, executed, class, score) in common::PIPELINE_CASES {
        let report = common::validate_candidate(&analyzer, name);
        if let Err(why) = common::check_pipeline_case(&report, executed, class, score) {
            panic!("{name}: {why}\n{report:#?}");
        }
    }
}

#[test]
fn undefined_name_detail_lists_the_name_and_line() {
    let analyzer = common::analyzer_fixtures();
    let report = common::validate_candidate(&analyzer, "pipe_undefined_name");
    let check = report.failed_check().unwrap();
    assert_eq!(check.detail, "undefined name `window_mean` (line 4)");
    assert_eq!(report.diagnostic_key(), "undefined");
}

#[test]
fn passing_candidate_has_zero_cost_and_validator_pass() {
    let analyzer = common::analyzer_fixtures();
    let report = common::validate_candidate(&analyzer, "pipe_full_pass");
    assert!(report.checks.iter().all(|c| c.outcome == Outcome::Passed));
    assert_eq!(validator_pass(&report), 1);
    assert_eq!(stage_cost(&report), 0.0);
    assert_eq!(report.max_score, 100);
}

#[test]
fn behavior_and_type_failures_keep_their_diagnostic_keys() {
    let analyzer = common::analyzer_fixtures();
    let semantic = common::validate_candidate(&analyzer, "pipe_behavior_failure");
    assert_eq!(semantic.diagnostic_key(), "AssertionError");
    assert!(semantic.behavior_failed);
    let type_err = common::validate_candidate(&analyzer, "pipe_type_error");
    assert_eq!(type_err.primary_failure, FailureClass::Type);
    assert_eq!(type_err.diagnostic_key(), "TypeError");
    let exit = common::validate_candidate(&analyzer, "pipe_behavior_exit");
    assert_eq!(exit.diagnostic_key(), "too");
}

#[test]
fn paths_in_diagnostics_do_not_leak_the_workspace() {
    let analyzer = common::analyzer_fixtures();
    let report = common::validate_candidate(&analyzer, "pipe_runtime_crash");
    let detail = &report.failed_check().unwrap().detail;
    assert!(detail.contains("ZeroDivisionError"), "{detail}");
    assert!(!detail.contains("/tmp"), "{detail}");
}
