use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use repairloop::analyzer::{Analyzer, FixtureAnalyzer, SubprocessAnalyzer};
use repairloop::bandit::{LinUcb, RetrievalAction};
use repairloop::config::ControllerConfig;
use repairloop::credit::TraceEntry;
use repairloop::exec::{Allowlist, BoundedRunner};
use repairloop::harness::{render_table, run_phase, Suite};
use repairloop::memory::{compute_fingerprint, now_ms, MemoryStore, RetrievalMode};
use repairloop::orchestrator::{
    Condition, Controller, Generator, HttpGenerator, HttpGeneratorConfig, Learners,
    ScriptedGenerator, MEMORY_PATH_ENV,
};
use repairloop::skills::SkillLibrary;
use repairloop::task::TaskSpec;
use repairloop::validator::{DisabledJudge, Validator};

const ROOT_ENV: &str = "REPAIRLOOP_ROOT";
const ANALYZER_ENV: &str = "REPAIRLOOP_ANALYZER";

#[derive(Parser)]
#[command(name = "repairloop", version, about = "Validation-gated repair loop around a frozen code generator")]
struct Cli {
    /// State directory holding stores and run folders [env: REPAIRLOOP_ROOT]
    #[arg(long, global = true)]
    root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task.
    Run {
        #[arg(long)]
        task: PathBuf,
        #[arg(long, default_value = "mera")]
        condition: String,
        #[arg(long)]
        attempts: Option<u32>,
        /// `scripted:<dir>` or `http`.
        #[arg(long)]
        generator: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use recorded analyzer responses instead of the analyzer process.
        #[arg(long)]
        analyzer_fixtures: Option<PathBuf>,
        /// Analyzer command line [env: REPAIRLOOP_ANALYZER]
        #[arg(long)]
        analyzer: Option<String>,
        #[arg(long)]
        workspace: Option<PathBuf>,
    },
    /// Run a benchmark suite.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print stored learner state.
    Inspect {
        #[command(subcommand)]
        what: Inspect,
    },
}

#[derive(Subcommand)]
enum Inspect {
    /// Ranked memory matches for a task file, or the whole store.
    Memory {
        #[arg(long)]
        task: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    Skills,
    Arms,
    Traces,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    let root = cli
        .root
        .or_else(|| std::env::var_os(ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".repairloop"));
    match cli.command {
        Command::Run {
            task,
            condition,
            attempts,
            generator,
            config,
            analyzer_fixtures,
            analyzer,
            workspace,
        } => run(
            &root,
            &task,
            condition.parse()?,
            attempts,
            &generator,
            config.as_deref(),
            analyzer_fixtures.as_deref(),
            analyzer,
            workspace,
        ),
        Command::Bench { suite, out } => {
            let suite = Suite::load(&suite).with_context(|| format!("loading {}", suite.display()))?;
            let outcome = run_phase(&suite, &out)?;
            print!("{}", render_table(&outcome.summary));
            Ok(if outcome.summary.harness_errors > 0 {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Inspect { what } => {
            inspect(&root, what)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    root: &Path,
    task_path: &Path,
    condition: Condition,
    attempts: Option<u32>,
    generator: &str,
    config: Option<&Path>,
    fixtures: Option<&Path>,
    analyzer_cmd: Option<String>,
    workspace: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let config = match config {
        Some(p) => ControllerConfig::load(p)?,
        None => ControllerConfig::default(),
    };
    let mut task = TaskSpec::load(task_path)?;
    if let Some(a) = attempts {
        task.attempts = a;
    }
    let workspace = workspace.unwrap_or_else(|| root.join("workspaces").join(&task.id));
    std::fs::create_dir_all(&workspace)?;
    let task = task.with_workspace(workspace.canonicalize()?);

    let runner = BoundedRunner::new(Allowlist::from_env_or_default()?, &task.workspace);
    let analyzer: Box<dyn Analyzer> = match fixtures {
        Some(dir) => Box::new(FixtureAnalyzer::load_dir(dir)?),
        None => {
            let cmd = analyzer_cmd
                .or_else(|| std::env::var(ANALYZER_ENV).ok())
                .unwrap_or_else(|| "python3 -m repairloop_analyzer".into());
            Box::new(SubprocessAnalyzer::new(
                runner.clone(),
                cmd.split_whitespace().map(String::from).collect(),
            ))
        }
    };
    let mut generator: Box<dyn Generator> = match generator.split_once(':') {
        Some(("scripted", dir)) => Box::new(ScriptedGenerator::new(Path::new(dir))?),
        None if generator == "http" => {
            Box::new(HttpGenerator::new(HttpGeneratorConfig::default().with_env())?)
        }
        _ => bail!("--generator must be `scripted:<dir>` or `http`"),
    };
    let validator = Validator::new(runner, analyzer.as_ref()).with_output_cap(config.output_cap);
    let controller = Controller {
        config: &config,
        analyzer: analyzer.as_ref(),
        validator: &validator,
        judge: &DisabledJudge,
    };
    let mut learners = Learners::open(&root.join("stores").join(condition.slug()), &config)?;
    let label = format!("{}-{}", task.id, now_ms());
    let run_dir = root.join("runs").join(&label);
    std::fs::create_dir_all(&run_dir)?;
    let result = controller.run_task(
        &task,
        condition,
        generator.as_mut(),
        &mut learners,
        Some(&run_dir),
        &label,
    )?;
    println!(
        "task {} [{}]: {} after {} attempt(s)",
        result.task_id,
        condition.label(),
        if result.accepted { "ACCEPTED" } else { "FAILED" },
        result.attempts
    );
    if let Some(f) = result.failure {
        println!("final failure: {f:?}");
    }
    if let Some(e) = &result.client_error {
        println!("client error: {e}");
    }
    println!("run folder: {}", run_dir.display());
    Ok(if result.accepted {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn inspect(root: &Path, what: Inspect) -> anyhow::Result<()> {
    let stores: Vec<PathBuf> = Condition::ALL
        .iter()
        .map(|c| root.join("stores").join(c.slug()))
        .filter(|p| p.is_dir())
        .collect();
    if stores.is_empty() {
        bail!("no stores under {}", root.join("stores").display());
    }
    for dir in stores {
        println!("== {}", dir.display());
        match &what {
            Inspect::Memory { task, k } => {
                let path = std::env::var_os(MEMORY_PATH_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| dir.join("memory.jsonl"));
                let store = MemoryStore::load(&path, usize::MAX)?;
                match task {
                    Some(task) => {
                        let task = TaskSpec::load(task)?;
                        let cfg = ControllerConfig::default();
                        let query = compute_fingerprint(
                            &FixtureAnalyzer::new(),
                            &task.family_label(),
                            &task.prompt,
                            None,
                            None,
                            cfg.trigram_cap,
                        )?;
                        match store.retrieve(&query, RetrievalMode::AstMatch, *k, &cfg.similarity) {
                            Ok(found) => {
                                for s in found {
                                    println!(
                                        "{:>6}  {:.3}  {}  accepted={}  failure={:?}",
                                        s.record.record_id,
                                        s.score,
                                        s.record.task_id,
                                        s.record.accepted,
                                        s.record.report.primary_failure
                                    );
                                }
                            }
                            Err(e) => println!("{e}"),
                        }
                    }
                    None => {
                        for r in store.records() {
                            println!(
                                "{:>6}  {}  action={}  accepted={}  reward={:+.3}  failure={:?}",
                                r.record_id,
                                r.task_id,
                                r.retrieval_action.name(),
                                r.accepted,
                                r.reward,
                                r.report.primary_failure
                            );
                        }
                    }
                }
            }
            Inspect::Skills => {
                let lib = SkillLibrary::load(&dir.join("skills.jsonl"), usize::MAX)?;
                for s in lib.skills() {
                    println!(
                        "{}  {:<28} offered={} succeeded={} quarantined={} families={:?}",
                        &s.hash[..12],
                        s.name,
                        s.n_offered,
                        s.n_succ,
                        s.quarantined,
                        s.families
                    );
                }
            }
            Inspect::Arms => {
                let bandit = LinUcb::load_or_new(&dir.join("arms.json"), Default::default())?;
                for a in RetrievalAction::ALL {
                    let arm = bandit.arm(a);
                    let theta: Vec<String> = arm.theta().iter().map(|x| format!("{x:+.3}")).collect();
                    println!("{:<18} pulls={:<4} theta=[{}]", a.name(), arm.pulls(), theta.join(" "));
                }
            }
            Inspect::Traces => {
                let entries: Vec<TraceEntry> =
                    repairloop::jsonl::read_all(&dir.join("traces.jsonl"))?;
                for e in entries {
                    println!(
                        "{}  {}  i={} j={} delta={:+.3} E={:.4} w={:.4} signal={:+.4}",
                        e.run,
                        e.task_id,
                        e.record.source,
                        e.record.target,
                        e.record.delta,
                        e.record.eligibility,
                        e.record.weight,
                        e.record.signal
                    );
                }
            }
        }
    }
    Ok(())
}
