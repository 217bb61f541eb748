//! Command-line harness: verify candidate programs against cascades of
//! weak and full verifiers, rank the pools, export preference pairs, train
//! the linear scorer, and benchmark strategy throughput.
//!
//! Exit codes: 0 on success, 1 on configuration errors, 2 when a command
//! completed but some candidates hit infrastructure failures.

mod commands;
mod config;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prunerank::error::Result;

use commands::{cmd_bench, cmd_export_pairs, cmd_rank, cmd_train, cmd_verify, CommandStatus};
use config::{load_cascade, CascadeConfig, RunConfig, StrategySpec};

#[derive(Parser)]
#[command(
    name = "prunerank",
    version,
    about = "Rank candidate programs with verifier cascades and trained scorers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cascade verifier over the corpus and write verdict files
    Verify(VerifyArgs),
    /// Rank candidate pools per strategy and write the trade-off report
    Rank(RankArgs),
    /// Export preference pairs from persisted verdicts
    ExportPairs(ExportPairsArgs),
    /// Train the linear scorer on exported pairs
    Train(TrainArgs),
    /// Measure per-strategy inference throughput
    Bench(BenchArgs),
}

#[derive(Args)]
struct CorpusOpts {
    /// Problems JSONL file
    #[arg(long, env = "PRUNERANK_CORPUS")]
    corpus: PathBuf,
    /// Candidate programs JSONL file
    #[arg(long, env = "PRUNERANK_CANDIDATES")]
    candidates: PathBuf,
}

#[derive(Args)]
struct CascadeOpt {
    /// Cascade config JSON listing verifiers and scorers
    #[arg(long, env = "PRUNERANK_CASCADE")]
    cascade: PathBuf,
}

#[derive(Args)]
struct OutOpt {
    /// Directory for verdicts, rankings, reports, and scratch space
    #[arg(long, env = "PRUNERANK_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StrategyOpts {
    /// Ranking strategy as <prune|none>+<scorer|vote>; repeatable
    #[arg(
        long = "strategy",
        env = "PRUNERANK_STRATEGY",
        value_delimiter = ',',
        required = true
    )]
    strategies: Vec<String>,
}

#[derive(Args)]
struct SeedOpt {
    /// Seed for pair sampling and training
    #[arg(long, env = "PRUNERANK_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct KeepScratchOpt {
    /// Keep per-run scratch directories for inspection
    #[arg(long, env = "PRUNERANK_KEEP_SCRATCH")]
    keep_scratch: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[command(flatten)]
    cascade: CascadeOpt,
    #[command(flatten)]
    out: OutOpt,
    /// Stop each candidate's test run at the first failing test
    #[arg(long, env = "PRUNERANK_FAIL_FAST")]
    fail_fast: bool,
    #[command(flatten)]
    keep_scratch: KeepScratchOpt,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[command(flatten)]
    cascade: CascadeOpt,
    #[command(flatten)]
    out: OutOpt,
    #[command(flatten)]
    strategies: StrategyOpts,
    /// Selection sizes to report best-of-k at; repeatable
    #[arg(
        long = "k",
        env = "PRUNERANK_K",
        value_delimiter = ',',
        default_value = "1"
    )]
    ks: Vec<usize>,
    /// Also time each strategy's inference pass
    #[arg(long, env = "PRUNERANK_MEASURE")]
    measure: bool,
    /// Timing runs per strategy when measuring
    #[arg(long, env = "PRUNERANK_RUNS", default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    keep_scratch: KeepScratchOpt,
}

#[derive(Args)]
struct ExportPairsArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[command(flatten)]
    cascade: CascadeOpt,
    #[command(flatten)]
    out: OutOpt,
    #[command(flatten)]
    seed: SeedOpt,
}

#[derive(Args)]
struct TrainArgs {
    /// Problems JSONL file, for pair feature extraction
    #[arg(long, env = "PRUNERANK_CORPUS")]
    corpus: PathBuf,
    #[command(flatten)]
    out: OutOpt,
    #[command(flatten)]
    seed: SeedOpt,
    /// Gradient descent epochs
    #[arg(long, env = "PRUNERANK_EPOCHS", default_value_t = 500)]
    epochs: usize,
    /// Gradient descent step size
    #[arg(long, env = "PRUNERANK_LEARNING_RATE", default_value_t = 1.0)]
    learning_rate: f64,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    corpus: CorpusOpts,
    #[command(flatten)]
    cascade: CascadeOpt,
    #[command(flatten)]
    out: OutOpt,
    #[command(flatten)]
    strategies: StrategyOpts,
    /// Timing runs per strategy
    #[arg(long, env = "PRUNERANK_RUNS", default_value_t = 5)]
    runs: usize,
    #[command(flatten)]
    keep_scratch: KeepScratchOpt,
}

/// Baseline config; subcommands overwrite the fields they parse.
fn base_config(problems: PathBuf, out: PathBuf) -> RunConfig {
    RunConfig {
        problems_path: problems,
        candidates_path: None,
        cascade: CascadeConfig::default(),
        strategies: Vec::new(),
        ks: vec![1],
        runs: 5,
        measure: false,
        fail_fast: false,
        keep_scratch: false,
        out_dir: out,
        seed: 0,
        epochs: 500,
        learning_rate: 1.0,
    }
}

fn parse_strategies(raw: &[String]) -> Result<Vec<StrategySpec>> {
    raw.iter().map(|s| StrategySpec::parse(s)).collect()
}

fn dedup_ks(ks: Vec<usize>) -> Vec<usize> {
    let mut seen = Vec::new();
    for k in ks {
        if !seen.contains(&k) {
            seen.push(k);
        }
    }
    seen
}

fn dispatch(cli: Cli) -> Result<CommandStatus> {
    match cli.command {
        Command::Verify(args) => {
            let mut config = base_config(args.corpus.corpus, args.out.out);
            config.candidates_path = Some(args.corpus.candidates);
            config.cascade = load_cascade(&args.cascade.cascade)?;
            config.fail_fast = args.fail_fast;
            config.keep_scratch = args.keep_scratch.keep_scratch;
            config.validate()?;
            cmd_verify(&config)
        }
        Command::Rank(args) => {
            let mut config = base_config(args.corpus.corpus, args.out.out);
            config.candidates_path = Some(args.corpus.candidates);
            config.cascade = load_cascade(&args.cascade.cascade)?;
            config.strategies = parse_strategies(&args.strategies.strategies)?;
            config.ks = dedup_ks(args.ks);
            config.measure = args.measure;
            config.runs = args.runs;
            config.keep_scratch = args.keep_scratch.keep_scratch;
            config.validate()?;
            cmd_rank(&config)
        }
        Command::ExportPairs(args) => {
            let mut config = base_config(args.corpus.corpus, args.out.out);
            config.candidates_path = Some(args.corpus.candidates);
            config.cascade = load_cascade(&args.cascade.cascade)?;
            config.seed = args.seed.seed;
            config.validate()?;
            cmd_export_pairs(&config)
        }
        Command::Train(args) => {
            let mut config = base_config(args.corpus, args.out.out);
            config.seed = args.seed.seed;
            config.epochs = args.epochs;
            config.learning_rate = args.learning_rate;
            config.validate()?;
            cmd_train(&config)
        }
        Command::Bench(args) => {
            let mut config = base_config(args.corpus.corpus, args.out.out);
            config.candidates_path = Some(args.corpus.candidates);
            config.cascade = load_cascade(&args.cascade.cascade)?;
            config.strategies = parse_strategies(&args.strategies.strategies)?;
            config.runs = args.runs;
            config.keep_scratch = args.keep_scratch.keep_scratch;
            config.validate()?;
            cmd_bench(&config)
        }
    }
}

fn main() -> ExitCode {
    // clap's own exit code for usage errors is 2, which this tool reserves
    // for completed-with-failures; remap usage errors to 1
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(CommandStatus::Clean) => ExitCode::SUCCESS,
        Ok(CommandStatus::CompletedWithFailures) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(1)
        }
    }
}
