//! Phase-style benchmark runs and their statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyzer::{Analyzer, FixtureAnalyzer, SubprocessAnalyzer};
use crate::config::ControllerConfig;
use crate::error::{Error, Result};
use crate::exec::{Allowlist, BoundedRunner};
use crate::jsonl;
use crate::orchestrator::{
    Condition, Controller, Generator, HttpGenerator, HttpGeneratorConfig, Learners,
    ScriptedGenerator,
};
use crate::task::TaskSpec;
use crate::validator::{DisabledJudge, FailureClass, Validator};

/// Two-sided normal quantiles for the supported confidence levels.
pub const Z_TABLE: [(f64, f64); 3] = [(0.90, 1.644854), (0.95, 1.959964), (0.99, 2.575829)];

pub fn z_for(confidence: f64) -> Result<f64> {
    Z_TABLE
        .iter()
        .find(|(c, _)| (c - confidence).abs() < 1e-9)
        .map(|(_, z)| *z)
        .ok_or(Error::UnsupportedConfidence(confidence))
}

/// Wilson score interval for `s` successes in `n` trials.
pub fn wilson_interval(s: u64, n: u64, confidence: f64) -> Result<(f64, f64)> {
    if n == 0 || s > n {
        return Err(Error::InvalidCounts {
            successes: s,
            trials: n,
        });
    }
    let z = z_for(confidence)?;
    let (sf, nf) = (s as f64, n as f64);
    let p = sf / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    // The endpoints are exact at the degenerate counts; avoid rounding noise.
    let lo = if s == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if s == n { 1.0 } else { (center + half).min(1.0) };
    Ok((lo, hi))
}

pub fn round3(x: f64) -> f64 {
    (x * 1000.0).round() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorSpec {
    /// Responses under `<dir>/<condition>/<task id>/r<repeat>/`.
    Scripted { dir: PathBuf },
    Http(HttpGeneratorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AnalyzerSpec {
    /// Recorded responses (see [`FixtureAnalyzer::load_dir`]).
    Fixtures { dir: PathBuf },
    Subprocess { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub name: String,
    /// Task files, relative to the suite file.
    pub tasks: Vec<PathBuf>,
    pub repeats: u32,
    pub conditions: Vec<Condition>,
    pub generator: GeneratorSpec,
    pub analyzer: AnalyzerSpec,
    /// Overrides every task's attempt budget.
    #[serde(default)]
    pub attempts: Option<u32>,
    #[serde(default)]
    pub config: ControllerConfig,
    /// Extra programs allowed besides the default allowlist.
    #[serde(default)]
    pub allow: Vec<String>,
}

impl Suite {
    /// Loads a suite and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut suite: Suite = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        suite.tasks.iter_mut().for_each(resolve);
        match &mut suite.generator {
            GeneratorSpec::Scripted { dir } => resolve(dir),
            GeneratorSpec::Http(_) => {}
        }
        if let AnalyzerSpec::Fixtures { dir } = &mut suite.analyzer {
            resolve(dir);
        }
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() || self.conditions.is_empty() || self.repeats == 0 {
            return Err(Error::InvalidConfig(
                "a suite needs tasks, conditions and at least one repeat".into(),
            ));
        }
        if self.attempts == Some(0) {
            return Err(Error::InvalidConfig("attempt budget must be at least 1".into()));
        }
        self.config.validate()
    }
}

/// Outcome of one (condition, task, repeat) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub condition: Condition,
    pub task_id: String,
    pub repeat: u32,
    pub accepted: bool,
    pub attempts: u32,
    pub failure: Option<FailureClass>,
    pub total_score: u32,
    pub duration_secs: f64,
    pub client_error: Option<String>,
    /// Set when the harness itself could not complete the run.
    pub harness_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub runs: u64,
    pub successes: u64,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_attempts: f64,
    pub mean_duration_secs: f64,
    /// Mean final total score; the point scheme is this tool's own.
    pub mean_total_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskBreakdown {
    pub condition: Condition,
    pub task_id: String,
    pub runs: u64,
    pub successes: u64,
    pub failures: BTreeMap<FailureClass, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub suite: String,
    pub confidence: f64,
    pub conditions: Vec<ConditionSummary>,
    pub per_task: Vec<TaskBreakdown>,
    pub harness_errors: usize,
}

/// Failure classes of the non-accepted runs per (condition, task).
pub fn summarize_failures(runs: &[RunRecord]) -> BTreeMap<(Condition, String), BTreeMap<FailureClass, u32>> {
    let mut out: BTreeMap<(Condition, String), BTreeMap<FailureClass, u32>> = BTreeMap::new();
    for r in runs.iter().filter(|r| !r.accepted) {
        let class = r.failure.unwrap_or(FailureClass::Unknown);
        *out.entry((r.condition, r.task_id.clone()))
            .or_default()
            .entry(class)
            .or_default() += 1;
    }
    out
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0u64), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Aggregates runs in first-seen condition and task order.
pub fn summarize(suite: &str, runs: &[RunRecord]) -> Result<PhaseSummary> {
    let confidence = 0.95;
    let mut conditions: Vec<Condition> = Vec::new();
    let mut tasks: Vec<(Condition, String)> = Vec::new();
    for r in runs {
        if !conditions.contains(&r.condition) {
            conditions.push(r.condition);
        }
        let key = (r.condition, r.task_id.clone());
        if !tasks.contains(&key) {
            tasks.push(key);
        }
    }
    let failures = summarize_failures(runs);
    let mut summary = PhaseSummary {
        suite: suite.to_string(),
        confidence,
        conditions: Vec::new(),
        per_task: Vec::new(),
        harness_errors: runs.iter().filter(|r| r.harness_error.is_some()).count(),
    };
    for c in conditions {
        let rs: Vec<&RunRecord> = runs.iter().filter(|r| r.condition == c).collect();
        let n = rs.len() as u64;
        let s = rs.iter().filter(|r| r.accepted).count() as u64;
        let (lo, hi) = wilson_interval(s, n, confidence)?;
        summary.conditions.push(ConditionSummary {
            condition: c,
            runs: n,
            successes: s,
            success_rate: s as f64 / n as f64,
            ci_low: lo,
            ci_high: hi,
            mean_attempts: mean(rs.iter().map(|r| f64::from(r.attempts))),
            mean_duration_secs: mean(rs.iter().map(|r| r.duration_secs)),
            mean_total_score: mean(rs.iter().map(|r| f64::from(r.total_score))),
        });
    }
    for (c, task) in tasks {
        let rs: Vec<&RunRecord> = runs
            .iter()
            .filter(|r| r.condition == c && r.task_id == task)
            .collect();
        summary.per_task.push(TaskBreakdown {
            condition: c,
            runs: rs.len() as u64,
            successes: rs.iter().filter(|r| r.accepted).count() as u64,
            failures: failures.get(&(c, task.clone())).cloned().unwrap_or_default(),
            task_id: task,
        });
    }
    Ok(summary)
}

/// Aligned text rendering of the summary tables.
pub fn render_table(summary: &PhaseSummary) -> String {
    let mut rows = vec![vec![
        "Condition".to_string(),
        "Runs".into(),
        "Successes".into(),
        "Success rate".into(),
        "95% Wilson CI".into(),
        "Mean attempts".into(),
        "Mean duration (s)".into(),
        "Mean total score*".into(),
    ]];
    for c in &summary.conditions {
        rows.push(vec![
            c.condition.label().into(),
            c.runs.to_string(),
            c.successes.to_string(),
            format!("{:.3}", c.success_rate),
            format!("[{:.3}, {:.3}]", c.ci_low, c.ci_high),
            format!("{:.2}", c.mean_attempts),
            format!("{:.1}", c.mean_duration_secs),
            format!("{:.1}", c.mean_total_score),
        ]);
    }
    let mut out = format!("Suite: {}\n\n", summary.suite);
    out.push_str(&align(&rows));
    out.push_str("* total score uses this tool's stage point scheme.\n\n");
    let mut rows = vec![vec![
        "Condition".to_string(),
        "Task".into(),
        "Passes".into(),
        "Residual failures".into(),
    ]];
    for t in &summary.per_task {
        let fails = t
            .failures
            .iter()
            .map(|(c, n)| format!("{}x{n}", c.code()))
            .collect::<Vec<_>>()
            .join(" ");
        rows.push(vec![
            t.condition.label().into(),
            t.task_id.clone(),
            format!("{}/{}", t.successes, t.runs),
            if fails.is_empty() { "-".into() } else { fails },
        ]);
    }
    out.push_str(&align(&rows));
    if summary.harness_errors > 0 {
        let _ = writeln!(out, "\n{} run(s) hit harness errors.", summary.harness_errors);
    }
    out
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|i| rows.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (n, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(cell, w)| format!("{cell:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if n == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let _ = writeln!(out, "{}", rule.join("  "));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseOutcome {
    pub summary: PhaseSummary,
    pub runs: Vec<RunRecord>,
}

fn build_analyzer(spec: &AnalyzerSpec, runner: &BoundedRunner) -> Result<Box<dyn Analyzer>> {
    Ok(match spec {
        AnalyzerSpec::Fixtures { dir } => Box::new(FixtureAnalyzer::load_dir(dir)?),
        AnalyzerSpec::Subprocess { command } => {
            Box::new(SubprocessAnalyzer::new(runner.clone(), command.clone()))
        }
    })
}

fn build_generator(
    spec: &GeneratorSpec,
    condition: Condition,
    task_id: &str,
    repeat: u32,
) -> Result<Box<dyn Generator>> {
    Ok(match spec {
        GeneratorSpec::Scripted { dir } => Box::new(ScriptedGenerator::new(
            &dir.join(condition.slug()).join(task_id).join(format!("r{repeat}")),
        )?),
        GeneratorSpec::Http(cfg) => Box::new(HttpGenerator::new(cfg.clone().with_env())?),
    })
}

/// Runs every (condition, repeat, task) combination sequentially.
///
/// Layout under `out`: `<condition>/stores/` holds the learners shared by
/// that condition's runs, `<condition>/<task>/r<k>/workspace/` and
/// `.../run/` the per-run workspace and artifacts. Runs that fail inside the
/// harness are kept as failed runs.
pub fn run_phase(suite: &Suite, out: &Path) -> Result<PhaseOutcome> {
    suite.validate()?;
    std::fs::create_dir_all(out)?;
    let out = out.canonicalize()?;
    let mut allowlist = Allowlist::from_env_or_default()?;
    for p in &suite.allow {
        allowlist = allowlist.with(p.clone());
    }
    let runner = BoundedRunner::new(allowlist, &out);
    let analyzer = build_analyzer(&suite.analyzer, &runner)?;
    let validator = Validator::new(runner, analyzer.as_ref()).with_output_cap(suite.config.output_cap);
    let judge = DisabledJudge;
    let controller = Controller {
        config: &suite.config,
        analyzer: analyzer.as_ref(),
        validator: &validator,
        judge: &judge,
    };
    let mut tasks = Vec::new();
    for path in &suite.tasks {
        let mut task = TaskSpec::load(path)?;
        if let Some(a) = suite.attempts {
            task.attempts = a;
        }
        tasks.push(task);
    }

    let mut runs = Vec::new();
    for &condition in &suite.conditions {
        let cond_dir = out.join(condition.slug());
        let mut learners = Learners::open_isolated(&cond_dir.join("stores"), &suite.config)?;
        for repeat in 1..=suite.repeats {
            for task in &tasks {
                let base = cond_dir.join(&task.id).join(format!("r{repeat}"));
                let run_dir = base.join("run");
                let task = task.clone().with_workspace(base.join("workspace"));
                let label = format!("{}/{}/r{repeat}", condition.slug(), task.id);
                let outcome = std::fs::create_dir_all(&run_dir)
                    .map_err(Error::from)
                    .and_then(|_| build_generator(&suite.generator, condition, &task.id, repeat))
                    .and_then(|mut generator| {
                        controller.run_task(
                            &task,
                            condition,
                            generator.as_mut(),
                            &mut learners,
                            Some(&run_dir),
                            &label,
                        )
                    });
                let record = match outcome {
                    Ok(r) => RunRecord {
                        condition,
                        task_id: task.id.clone(),
                        repeat,
                        accepted: r.accepted,
                        attempts: r.attempts,
                        failure: r.failure,
                        total_score: r.total_score(),
                        duration_secs: r.duration_secs,
                        client_error: r.client_error,
                        harness_error: None,
                    },
                    Err(e) => {
                        log::error!("run {label} failed in the harness: {e}");
                        RunRecord {
                            condition,
                            task_id: task.id.clone(),
                            repeat,
                            accepted: false,
                            attempts: 0,
                            failure: Some(FailureClass::Unknown),
                            total_score: 0,
                            duration_secs: 0.0,
                            client_error: None,
                            harness_error: Some(e.to_string()),
                        }
                    }
                };
                runs.push(record);
            }
        }
    }
    let summary = summarize(&suite.name, &runs)?;
    jsonl::write_all(&out.join("runs.jsonl"), &runs)?;
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    std::fs::write(out.join("summary.txt"), render_table(&summary))?;
    Ok(PhaseOutcome { summary, runs })
}
