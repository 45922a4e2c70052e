//! `induct`: ingest datasets, induce instructions, evaluate them, compare
//! methods, export rollouts and render reports.

mod commands;
mod config;
mod workspace;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use induct::prompting::Method;

use commands::{ConfigError, Ctx, Outcome};
use config::Config;

#[derive(Debug, Parser)]
#[command(
    name = "induct",
    version,
    about = "Instruction induction experiments against OpenAI-compatible endpoints"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `execution.max_in_flight`.
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Overrides `execution.cache_dir`.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Overrides `execution.work_dir`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load raw datasets, filter them and write the store.
    Ingest {
        /// Overrides `datasets.input_dir`.
        #[arg(long)]
        input_dir: Option<PathBuf>,
    },
    /// Produce one prompt artifact per dataset, method and shot count.
    Induce {
        /// Comma-separated methods; overrides `induce.methods`.
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
        /// Comma-separated shot counts; overrides `induce.shot_counts`.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<usize>>,
        /// Comma-separated dataset names; overrides `induce.datasets`.
        #[arg(long, value_delimiter = ',')]
        datasets: Option<Vec<String>>,
        /// Meta-prompt template id; overrides `induce.template`.
        #[arg(long)]
        template: Option<String>,
    },
    /// Score every artifact on held-out examples.
    Evaluate {
        /// Overrides `evaluate.m`.
        #[arg(long)]
        m: Option<usize>,
    },
    /// Win rates and signed-rank tests between methods.
    Compare,
    /// Sample, score and export rollout groups.
    Rollout {
        /// Overrides `rollout.groups_per_dataset`.
        #[arg(long)]
        groups: Option<usize>,
        /// Overrides `rollout.shot_count`.
        #[arg(long)]
        shot_count: Option<usize>,
    },
    /// Tables, plot data and compression ratios from the results file.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Induce { .. } => "induce",
            Command::Evaluate { .. } => "evaluate",
            Command::Compare => "compare",
            Command::Rollout { .. } => "rollout",
            Command::Report => "report",
        }
    }

    fn apply(&self, cfg: &mut Config) {
        match self {
            Command::Ingest { input_dir } => {
                if let Some(d) = input_dir {
                    cfg.datasets.input_dir = Some(d.clone());
                }
            }
            Command::Induce {
                methods,
                shots,
                datasets,
                template,
            } => {
                if let Some(m) = methods {
                    cfg.induce.methods = m.clone();
                }
                if let Some(s) = shots {
                    cfg.induce.shot_counts = s.clone();
                }
                if let Some(d) = datasets {
                    cfg.induce.datasets = d.clone();
                }
                if let Some(t) = template {
                    cfg.induce.template = t.clone();
                }
            }
            Command::Evaluate { m } => {
                if let Some(m) = m {
                    cfg.evaluate.m = *m;
                }
            }
            Command::Rollout { groups, shot_count } => {
                if let Some(g) = groups {
                    cfg.rollout.groups_per_dataset = *g;
                }
                if shot_count.is_some() {
                    cfg.rollout.shot_count = *shot_count;
                }
            }
            Command::Compare | Command::Report => {}
        }
    }
}

fn load_config(global: &GlobalArgs, command: &Command) -> anyhow::Result<Config> {
    let mut cfg = match &global.config {
        Some(path) => Config::load(path).map_err(|e| commands::config_error(format!("{e:#}")))?,
        None => Config::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(n) = global.max_in_flight {
        cfg.execution.max_in_flight = n;
    }
    if let Some(dir) = &global.cache_dir {
        cfg.execution.cache_dir = Some(dir.clone());
    }
    if let Some(dir) = &global.work_dir {
        cfg.execution.work_dir = dir.clone();
    }
    command.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let cfg = load_config(&cli.global, &cli.command)?;
    let ctx = Ctx::open(cli.command.name(), cfg)?;
    let result = match cli.command {
        Command::Ingest { .. } => commands::ingest(&ctx),
        Command::Induce { .. } => commands::induce(&ctx),
        Command::Evaluate { .. } => commands::evaluate(&ctx),
        Command::Compare => commands::compare(&ctx),
        Command::Rollout { .. } => commands::rollout(&ctx),
        Command::Report => commands::report(&ctx),
    };
    ctx.finish(&result)?;
    result
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) if outcome.failures.is_empty() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("{} unit(s) failed:", outcome.failures.len());
            for f in &outcome.failures {
                eprintln!("  {f}");
            }
            ExitCode::from(1)
        }
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
