//! The five subcommands, wired from run configuration to output files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use serde::Serialize;

use prunerank::analysis::{
    render_curve_csv, render_report_csv, tradeoff_report, PruneDiagnostics, StrategySummary,
    ThroughputReport,
};
use prunerank::dataset::{export_pairs, PairExportConfig};
use prunerank::error::{Error, Result};
use prunerank::model::{
    load_corpus, read_jsonl, write_jsonl, Candidate, Corpus, Problem, PreferencePair,
};
use prunerank::scorer::{
    extract_features, pairwise_accuracy, train_linear_scorer, FeaturePair, FeatureSignals,
    FeatureVector, TrainConfig,
};
use prunerank::verifiers::{run_verifier, VerifierKind};

use crate::config::RunConfig;
use crate::pipeline::{
    load_verdict_map, measure_strategy, outcomes_from_full, points_for, rank_strategy,
    raw_program_count,
};

/// How a completed command ended, mapped to the process exit code.
pub enum CommandStatus {
    Clean,
    CompletedWithFailures,
}

fn load(config: &RunConfig) -> Result<Corpus> {
    let candidates = config
        .candidates_path
        .as_ref()
        .ok_or_else(|| Error::Config("missing candidates path".into()))?;
    load_corpus(&config.problems_path, candidates)
}

fn pretty_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(format!("{}\n", serde_json::to_string_pretty(value)?))
}

fn joined(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Runs every cascade verifier over the corpus and persists one verdict
/// file per verifier. Per-candidate infrastructure failures are reported
/// and turn the exit status into completed-with-failures.
pub fn cmd_verify(config: &RunConfig) -> Result<CommandStatus> {
    let corpus = load(config)?;
    let pools = corpus.pools();
    fs::create_dir_all(&config.out_dir)?;
    let policy = config.execution_policy("verify");
    let mut failure_total = 0;
    for spec in &config.cascade.verifiers {
        let run = run_verifier(spec, &corpus.problems, &pools, &policy, config.fail_fast)?;
        let path = config.verdict_path(&spec.id);
        write_jsonl(&path, &run.verdicts)?;
        println!(
            "verifier {}: {} verdicts, {} failures, {:.2}s -> {}",
            spec.id,
            run.verdicts.len(),
            run.failures.len(),
            run.wall_clock.as_secs_f64(),
            path.display()
        );
        for failure in &run.failures {
            eprintln!(
                "infrastructure failure: {}: {}",
                failure.candidate_id, failure.message
            );
        }
        failure_total += run.failures.len();
    }
    Ok(if failure_total == 0 {
        CommandStatus::Clean
    } else {
        CommandStatus::CompletedWithFailures
    })
}

/// Ranks every pool under each strategy from persisted verdicts, writes
/// rankings, the trade-off report, curve points, and prune diagnostics.
/// With `--measure` each strategy's inference pass is also timed.
pub fn cmd_rank(config: &RunConfig) -> Result<CommandStatus> {
    let corpus = load(config)?;
    let pools = corpus.pools();
    let full = config.full_verifier()?;
    let full_map = load_verdict_map(config, &full.id, None)?;
    let outcomes = outcomes_from_full(&full_map);
    let programs = raw_program_count(&pools);

    let mut rankings = Vec::new();
    let mut rows = Vec::new();
    let mut diagnostics: BTreeMap<String, PruneDiagnostics> = BTreeMap::new();
    let mut throughput: BTreeMap<String, ThroughputReport> = BTreeMap::new();
    for strategy in &config.strategies {
        let artifacts = rank_strategy(config, strategy, &corpus.problems, &pools, &outcomes)?;
        let points = points_for(&artifacts.rankings, &config.ks)?;
        let report = if config.measure {
            Some(measure_strategy(config, strategy, &corpus.problems, &pools, &outcomes)?)
        } else {
            None
        };
        rows.push(StrategySummary {
            strategy_id: strategy.id.clone(),
            points,
            pps: report.as_ref().map(|r| r.pps),
            runs: report.as_ref().map(|r| r.runs).unwrap_or(0),
            programs,
            fallback_count: artifacts.fallback_count,
            problems: artifacts.rankings.len(),
        });
        if let Some(diag) = artifacts.diagnostics {
            diagnostics.insert(strategy.id.clone(), diag);
        }
        if let Some(report) = report {
            throughput.insert(strategy.id.clone(), report);
        }
        rankings.extend(artifacts.rankings);
    }
    let (rows, warnings) = tradeoff_report(rows);
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }

    fs::create_dir_all(&config.out_dir)?;
    let rankings_path = config.out_dir.join("rankings.jsonl");
    write_jsonl(&rankings_path, &rankings)?;
    let report_path = config.out_dir.join("report.csv");
    fs::write(&report_path, render_report_csv(&rows))?;
    let curve_path = config.out_dir.join("curve.csv");
    fs::write(&curve_path, render_curve_csv(&rows))?;
    let diagnostics_path = config.out_dir.join("diagnostics.json");
    fs::write(&diagnostics_path, pretty_json(&diagnostics)?)?;
    let mut written = vec![rankings_path, report_path, curve_path, diagnostics_path];
    if config.measure {
        let throughput_path = config.out_dir.join("throughput.json");
        fs::write(&throughput_path, pretty_json(&throughput)?)?;
        written.push(throughput_path);
    }

    for row in &rows {
        let points = row
            .points
            .iter()
            .map(|p| format!("bof_{} {:.4}", p.k, p.best_of_k))
            .collect::<Vec<_>>()
            .join(", ");
        let pps = row
            .pps
            .map(|p| format!(", {p:.2} programs/s"))
            .unwrap_or_default();
        println!(
            "strategy {}: {} problems, {} fallbacks, {points}{pps}",
            row.strategy_id, row.problems, row.fallback_count
        );
    }
    println!("wrote {}", joined(&written));
    Ok(CommandStatus::Clean)
}

/// Builds preference pairs from persisted syntax and full verdicts and
/// writes them as JSONL, printing per-problem counts.
pub fn cmd_export_pairs(config: &RunConfig) -> Result<CommandStatus> {
    let corpus = load(config)?;
    let pools: HashMap<String, Vec<Candidate>> = corpus.pools().into_iter().collect();
    let full = config.full_verifier()?.id.clone();
    let syntax = config
        .first_of_kind(VerifierKind::Syntax)
        .ok_or_else(|| {
            Error::Config(
                "cascade config has no syntax verifier; pair export filters on syntax verdicts"
                    .into(),
            )
        })?
        .id
        .clone();
    let full_map = load_verdict_map(config, &full, None)?;
    let syntax_map = load_verdict_map(config, &syntax, None)?;
    let pair_config = PairExportConfig {
        seed: config.seed,
        ..PairExportConfig::default()
    };
    let pairs = export_pairs(&corpus.problems, &pools, &full_map, &syntax_map, &pair_config)?;

    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("pairs.jsonl");
    write_jsonl(&path, &pairs)?;
    for problem in &corpus.problems {
        let count = pairs.iter().filter(|p| p.problem_id == problem.id).count();
        println!("problem {}: {} pairs", problem.id, count);
    }
    println!("wrote {} pairs -> {}", pairs.len(), path.display());
    Ok(CommandStatus::Clean)
}

/// Features for one side of an exported pair. Pairs carry bare sources,
/// so only the source-derived features are populated.
fn surface_features(problem: &Problem, source: &str) -> FeatureVector {
    let candidate = Candidate {
        id: format!("{}::pair", problem.id),
        problem_id: problem.id.clone(),
        source: source.to_string(),
        dup_count: 1,
    };
    extract_features(
        problem,
        &candidate,
        FeatureSignals {
            lint: None,
            subset: None,
        },
    )
}

/// Trains the linear scorer on the exported pairs file and writes the
/// resulting params document.
pub fn cmd_train(config: &RunConfig) -> Result<CommandStatus> {
    let problems: Vec<Problem> = read_jsonl(&config.problems_path)?;
    let pairs_path = config.out_dir.join("pairs.jsonl");
    if !pairs_path.is_file() {
        return Err(Error::Config(format!(
            "no pairs file at `{}`; run the export-pairs command first",
            pairs_path.display()
        )));
    }
    let pairs: Vec<PreferencePair> = read_jsonl(&pairs_path)?;

    let mut feature_pairs = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let problem = problems
            .iter()
            .find(|p| p.id == pair.problem_id)
            .ok_or_else(|| {
                Error::Config(format!(
                    "pairs file references problem `{}` not in `{}`",
                    pair.problem_id,
                    config.problems_path.display()
                ))
            })?;
        feature_pairs.push(FeaturePair {
            winner: surface_features(problem, &pair.winner_source),
            loser: surface_features(problem, &pair.loser_source),
        });
    }

    let train_config = TrainConfig {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        seed: config.seed,
    };
    let outcome = train_linear_scorer(&feature_pairs, &train_config)?;
    let accuracy = pairwise_accuracy(&outcome.params, &feature_pairs)?;

    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("params.json");
    fs::write(&path, pretty_json(&outcome.params)?)?;
    println!(
        "trained on {} pairs over {} epochs: loss {:.6} -> {:.6}, pairwise accuracy {:.3}",
        feature_pairs.len(),
        outcome.epochs,
        outcome.initial_loss,
        outcome.final_loss,
        accuracy
    );
    println!("wrote {}", path.display());
    Ok(CommandStatus::Clean)
}

/// Times each strategy's inference pass over the corpus and writes the
/// per-strategy throughput reports.
pub fn cmd_bench(config: &RunConfig) -> Result<CommandStatus> {
    let corpus = load(config)?;
    let pools = corpus.pools();
    let full = config.full_verifier()?.id.clone();
    let full_map = load_verdict_map(config, &full, None)?;
    let outcomes = outcomes_from_full(&full_map);

    let mut throughput: BTreeMap<String, ThroughputReport> = BTreeMap::new();
    for strategy in &config.strategies {
        let report = measure_strategy(config, strategy, &corpus.problems, &pools, &outcomes)?;
        println!(
            "strategy {}: {:.2} programs/s over {} runs ({} programs)",
            strategy.id, report.pps, report.runs, report.programs
        );
        throughput.insert(strategy.id.clone(), report);
    }

    fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join("throughput.json");
    fs::write(&path, pretty_json(&throughput)?)?;
    println!("wrote {}", path.display());
    Ok(CommandStatus::Clean)
}
