mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::{BenchOptions, Outcome, Workspace, STUDENT};
use config::{BackendKind, RunConfig};

#[derive(Parser)]
#[command(
    name = "rankdistill",
    version,
    about = "Zero-shot LLM re-ranking and pairwise-to-pointwise distillation"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// pointwise-rg, pointwise-qg, pairwise-allpair, listwise or student.
    #[arg(long, global = true)]
    strategy: Option<String>,
    /// Candidates per query.
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// BM25 top-n candidates per query as a run file.
    Retrieve,
    /// Re-rank candidates with one strategy.
    Rank {
        /// Take candidates from this run file instead of retrieving.
        #[arg(long)]
        candidates: Option<PathBuf>,
        /// Student checkpoint, for `--strategy student`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rank retrieved candidates with the pairwise teacher and write a training set.
    Teach,
    /// Train the pointwise student on a training set.
    Distill {
        /// Defaults to `train.jsonl` in the output directory.
        #[arg(long)]
        train_set: Option<PathBuf>,
    },
    /// nDCG@{1,5,10} and Acc@1 of a run against the configured qrels.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// Time strategies over the same candidates and write a report.
    Bench {
        /// Comma-separated strategies; defaults to all four prompt
        /// strategies, plus the student when a checkpoint is given.
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Use only the first N queries.
        #[arg(long)]
        queries: Option<usize>,
        /// Added latency per backend call, in milliseconds.
        #[arg(long)]
        delay_ms: Option<u64>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic corpus, queries and qrels.
    Synth {
        /// Also write a movie catalog with this many titles.
        #[arg(long)]
        movies: Option<usize>,
    },
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "oracle" => Ok(BackendKind::Oracle),
        "http" => Ok(BackendKind::Http),
        other => Err(format!("unknown backend `{other}` (expected oracle or http)")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(s) = &cli.strategy {
        config.strategy.name = s.clone();
    }
    if let Some(n) = cli.n {
        config.retrieval.n = n;
    }
    if let Some(b) = cli.backend {
        config.backend.kind = b;
    }
    if let Some(out) = &cli.out {
        config.paths.output_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<Outcome> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth { movies } => commands::synth(&config, *movies),
        Command::Eval { run } => commands::eval(&config, run),
        Command::Retrieve => commands::retrieve(&Workspace::load(config)?),
        Command::Rank { candidates, checkpoint } => {
            let strategy = config.strategy.name.clone();
            commands::rank(
                &Workspace::load(config)?,
                &strategy,
                candidates.as_deref(),
                checkpoint.as_deref(),
            )
        }
        Command::Teach => commands::teach(&Workspace::load(config)?),
        Command::Distill { train_set } => commands::distill(&Workspace::load(config)?, train_set.as_deref()),
        Command::Bench {
            strategies,
            queries,
            delay_ms,
            checkpoint,
        } => {
            let mut strategies = strategies.clone();
            if strategies.is_empty() {
                strategies = ["pointwise-rg", "pointwise-qg", "pairwise-allpair", "listwise"]
                    .map(String::from)
                    .to_vec();
                if checkpoint.is_some() {
                    strategies.push(STUDENT.into());
                }
            }
            let opts = BenchOptions {
                strategies,
                max_queries: *queries,
                delay: delay_ms.map(Duration::from_millis),
                checkpoint: checkpoint.as_deref(),
            };
            commands::bench(&Workspace::load(config)?, &opts)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.unprocessed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "{}",
                    json!({
                        "error": "some queries were not fully processed",
                        "kind": "incomplete",
                        "unprocessed": outcome.unprocessed,
                    })
                );
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": format!("{e:#}"), "kind": "failed" }));
            ExitCode::from(1)
        }
    }
}
