//! Shared plumbing between subcommands: verdict file IO, scorer assembly,
//! per-strategy ranking, and the measured inference pass.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;

use prunerank::analysis::{
    aggregate_prune_diagnostics, measure_pps, removed_rank_stats, BofPoint, PruneDiagnostics,
    ThroughputReport,
};
use prunerank::error::{Error, Result};
use prunerank::model::{read_jsonl, Candidate, Problem, Ranking, VerdictRecord};
use prunerank::ranking::{
    best_of_k, majority_vote_rank, prune_then_rank, rank, FallbackPolicy, PrimaryScore,
    PruneThenRankConfig, RankStrategy,
};
use prunerank::sandbox::ExecutionPolicy;
use prunerank::scorer::{LinearScorer, LinearScorerParams, RemoteScorer, Scorer};
use prunerank::verifiers::{index_verdicts, keep_for_pruning, run_verifier, VerifierKind, VerifierSpec};

use crate::config::{RunConfig, ScorePart, ScorerKind, StrategySpec};

/// Loads a verifier's persisted verdicts into a by-candidate map. A missing
/// file is a config error pointing at the verify command; `strategy` scopes
/// the message when one is involved.
pub fn load_verdict_map(
    config: &RunConfig,
    verifier_id: &str,
    strategy: Option<&str>,
) -> Result<HashMap<String, VerdictRecord>> {
    let path = config.verdict_path(verifier_id);
    if !path.is_file() {
        let scope = strategy.map(|s| format!("strategy `{s}`: ")).unwrap_or_default();
        return Err(Error::Config(format!(
            "{scope}no verdicts for verifier `{verifier_id}` at `{}`; run the verify command first",
            path.display()
        )));
    }
    let records: Vec<VerdictRecord> = read_jsonl(&path)?;
    let mut map = HashMap::with_capacity(records.len());
    for record in records {
        record.validate()?;
        if record.verifier_id != verifier_id {
            return Err(Error::Config(format!(
                "`{}` holds a verdict from verifier `{}`",
                path.display(),
                record.verifier_id
            )));
        }
        let candidate_id = record.candidate_id.clone();
        if map.insert(candidate_id.clone(), record).is_some() {
            return Err(Error::Config(format!(
                "`{}` repeats candidate `{candidate_id}`",
                path.display()
            )));
        }
    }
    Ok(map)
}

/// Ground truth extracted from the full verifier's verdicts. Candidates
/// without a recorded outcome are simply absent; ranking names them if
/// they come up.
pub fn outcomes_from_full(full: &HashMap<String, VerdictRecord>) -> HashMap<String, bool> {
    full.iter()
        .filter_map(|(id, verdict)| verdict.is_correct.map(|c| (id.clone(), c)))
        .collect()
}

/// Pool size before deduplication: every duplicate counts as one program.
pub fn raw_program_count(pools: &BTreeMap<String, Vec<Candidate>>) -> usize {
    pools.values().flatten().map(|c| c.dup_count).sum()
}

/// A scorer's ingredients, resolved once so repeated measurement runs do
/// no disk reads inside the timed window.
pub enum ScorerSeed {
    Linear { id: String, params: LinearScorerParams },
    Remote(RemoteScorer),
}

pub fn load_scorer_seed(config: &RunConfig, scorer_id: &str) -> Result<ScorerSeed> {
    let entry = config
        .scorer(scorer_id)
        .ok_or_else(|| Error::Config(format!("unknown scorer `{scorer_id}`")))?;
    match entry.kind {
        ScorerKind::Linear => {
            let path = entry.params_path.as_ref().expect("validated");
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!(
                    "scorer `{scorer_id}`: cannot read params `{}`: {e}",
                    path.display()
                ))
            })?;
            let params: LinearScorerParams = serde_json::from_str(&text).map_err(|e| {
                Error::Config(format!(
                    "scorer `{scorer_id}`: bad params `{}`: {e}",
                    path.display()
                ))
            })?;
            Ok(ScorerSeed::Linear {
                id: entry.id.clone(),
                params,
            })
        }
        ScorerKind::Remote => Ok(ScorerSeed::Remote(RemoteScorer::new(
            &entry.id,
            entry.endpoint.as_deref().expect("validated"),
            entry.token_budget(),
        ))),
    }
}

impl ScorerSeed {
    /// Builds the scorer for one pass. A linear scorer draws its lint or
    /// subset feature signal from the strategy's own prune verdicts, so a
    /// strategy's inference depends on nothing but its own cascade step.
    pub fn instantiate(
        &self,
        prune: Option<(&VerifierSpec, &HashMap<String, VerdictRecord>)>,
    ) -> Result<ScorerHandle<'_>> {
        match self {
            ScorerSeed::Linear { id, params } => {
                let (lint, subset) = match prune {
                    Some((spec, map)) => match spec.kind {
                        VerifierKind::Lint => (map.clone(), HashMap::new()),
                        VerifierKind::SubsetTests => (HashMap::new(), map.clone()),
                        _ => (HashMap::new(), HashMap::new()),
                    },
                    None => (HashMap::new(), HashMap::new()),
                };
                Ok(ScorerHandle::Owned(
                    LinearScorer::new(id, params.clone())?.with_signals(lint, subset),
                ))
            }
            ScorerSeed::Remote(scorer) => Ok(ScorerHandle::Borrowed(scorer)),
        }
    }
}

pub enum ScorerHandle<'a> {
    Owned(LinearScorer),
    Borrowed(&'a RemoteScorer),
}

impl ScorerHandle<'_> {
    fn score_map(&self, problem: &Problem, candidates: &[Candidate]) -> Result<HashMap<String, f64>> {
        let scores = match self {
            ScorerHandle::Owned(s) => s.score_batch(problem, candidates)?,
            ScorerHandle::Borrowed(s) => s.score_batch(problem, candidates)?,
        };
        Ok(candidates
            .iter()
            .zip(scores)
            .map(|(c, s)| (c.id.clone(), s))
            .collect())
    }
}

/// Rankings and bookkeeping for one strategy over the whole corpus.
pub struct StrategyArtifacts {
    pub rankings: Vec<Ranking>,
    pub diagnostics: Option<PruneDiagnostics>,
    pub fallback_count: usize,
}

/// Ranks every problem under one strategy from persisted verdicts.
///
/// Scoring covers the whole pool even when pruning is on, because the
/// diagnostics need the scorer's ordering of the removed candidates; the
/// measured inference pass scores survivors only.
pub fn rank_strategy(
    config: &RunConfig,
    strategy: &StrategySpec,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    outcomes: &HashMap<String, bool>,
) -> Result<StrategyArtifacts> {
    match &strategy.score {
        ScorePart::Vote => {
            let vid = strategy.verifier.as_deref().expect("vote strategies carry a verifier");
            let verdicts = load_verdict_map(config, vid, Some(&strategy.id))?;
            let mut rankings = Vec::new();
            for problem in problems {
                let pool = pools.get(&problem.id).map(Vec::as_slice).unwrap_or(&[]);
                if pool.is_empty() {
                    continue;
                }
                rankings.push(majority_vote_rank(
                    &problem.id,
                    pool,
                    &verdicts,
                    outcomes,
                    &strategy.id,
                )?);
            }
            Ok(StrategyArtifacts {
                rankings,
                diagnostics: None,
                fallback_count: 0,
            })
        }
        ScorePart::Scorer(sid) => {
            let prune_spec = match &strategy.verifier {
                Some(vid) => Some(
                    config
                        .verifier(vid)
                        .ok_or_else(|| Error::Config(format!("unknown verifier `{vid}`")))?
                        .clone(),
                ),
                None => None,
            };
            let prune_map = match &prune_spec {
                Some(spec) => Some(load_verdict_map(config, &spec.id, Some(&strategy.id))?),
                None => None,
            };
            let seed = load_scorer_seed(config, sid)?;
            let prune = prune_spec.as_ref().zip(prune_map.as_ref());
            let scorer = seed.instantiate(prune)?;

            let mut rankings = Vec::new();
            let mut fallback_count = 0;
            let mut diags = Vec::new();
            for problem in problems {
                let pool = pools.get(&problem.id).map(Vec::as_slice).unwrap_or(&[]);
                if pool.is_empty() {
                    continue;
                }
                let scores = scorer.score_map(problem, pool)?;
                match prune {
                    None => rankings.push(rank(
                        &problem.id,
                        pool,
                        &scores,
                        outcomes,
                        &RankStrategy::new(&strategy.id, PrimaryScore::Scorer),
                    )?),
                    Some((spec, map)) => {
                        let mut removed = HashSet::new();
                        for candidate in pool {
                            let verdict =
                                map.get(&candidate.id).ok_or_else(|| Error::MissingVerdict {
                                    candidate_id: candidate.id.clone(),
                                    verifier_id: spec.id.clone(),
                                })?;
                            if !keep_for_pruning(spec.kind, verdict) {
                                removed.insert(candidate.id.clone());
                            }
                        }
                        let prune_config = PruneThenRankConfig {
                            strategy_id: strategy.id.clone(),
                            prune: spec.clone(),
                            fallback: FallbackPolicy::VerifierMajorityVote,
                        };
                        let ranking =
                            prune_then_rank(&problem.id, pool, map, &scores, outcomes, &prune_config)?;
                        if ranking.fallback_used {
                            fallback_count += 1;
                        }
                        let unpruned = rank(
                            &problem.id,
                            pool,
                            &scores,
                            outcomes,
                            &RankStrategy::new(&strategy.id, PrimaryScore::Scorer),
                        )?;
                        diags.push(removed_rank_stats(&unpruned.ordered, &removed)?);
                        rankings.push(ranking);
                    }
                }
            }
            let diagnostics = if diags.is_empty() {
                None
            } else {
                Some(aggregate_prune_diagnostics(&diags)?)
            };
            Ok(StrategyArtifacts {
                rankings,
                diagnostics,
                fallback_count,
            })
        }
    }
}

/// Mean best-of-k across problems for each requested k. Pools smaller
/// than k are scored at their own size, so heterogeneous corpora still
/// produce one number per k.
pub fn points_for(rankings: &[Ranking], ks: &[usize]) -> Result<Vec<BofPoint>> {
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut sum = 0.0;
        for ranking in rankings {
            let k_eff = k.min(ranking.alpha.len());
            sum += best_of_k(&ranking.alpha, k_eff)?;
        }
        let mean = if rankings.is_empty() {
            0.0
        } else {
            sum / rankings.len() as f64
        };
        points.push(BofPoint { k, best_of_k: mean });
    }
    Ok(points)
}

/// One full inference pass for a strategy: run its verifier, score what
/// survives, rank, and drop the result. This is the unit of work the
/// throughput meter times; corpus loading, params loading, and verdict
/// persistence all stay outside the window.
pub fn run_inference_once(
    strategy: &StrategySpec,
    prune_spec: Option<&VerifierSpec>,
    seed: Option<&ScorerSeed>,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    outcomes: &HashMap<String, bool>,
    policy: &ExecutionPolicy,
) -> Result<()> {
    let fresh = match prune_spec {
        Some(spec) => {
            let run = run_verifier(spec, problems, pools, policy, false)?;
            if !run.failures.is_empty() {
                return Err(Error::Config(format!(
                    "strategy `{}`: {} infrastructure failures during a measured run",
                    strategy.id,
                    run.failures.len()
                )));
            }
            Some(index_verdicts(&run.verdicts))
        }
        None => None,
    };
    match &strategy.score {
        ScorePart::Vote => {
            let map = fresh.as_ref().expect("vote strategies carry a verifier");
            for problem in problems {
                let pool = pools.get(&problem.id).map(Vec::as_slice).unwrap_or(&[]);
                if pool.is_empty() {
                    continue;
                }
                majority_vote_rank(&problem.id, pool, map, outcomes, &strategy.id)?;
            }
        }
        ScorePart::Scorer(_) => {
            let seed = seed.expect("scorer strategies carry a seed");
            let prune = prune_spec.zip(fresh.as_ref());
            let scorer = seed.instantiate(prune)?;
            for problem in problems {
                let pool = pools.get(&problem.id).map(Vec::as_slice).unwrap_or(&[]);
                if pool.is_empty() {
                    continue;
                }
                match prune {
                    None => {
                        let scores = scorer.score_map(problem, pool)?;
                        rank(
                            &problem.id,
                            pool,
                            &scores,
                            outcomes,
                            &RankStrategy::new(&strategy.id, PrimaryScore::Scorer),
                        )?;
                    }
                    Some((spec, map)) => {
                        let survivors: Vec<Candidate> = pool
                            .iter()
                            .filter(|c| {
                                map.get(&c.id)
                                    .is_some_and(|v| keep_for_pruning(spec.kind, v))
                            })
                            .cloned()
                            .collect();
                        let scores = scorer.score_map(problem, &survivors)?;
                        let prune_config = PruneThenRankConfig {
                            strategy_id: strategy.id.clone(),
                            prune: spec.clone(),
                            fallback: FallbackPolicy::VerifierMajorityVote,
                        };
                        prune_then_rank(&problem.id, pool, map, &scores, outcomes, &prune_config)?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Times a strategy's inference pass over the corpus. Programs are counted
/// before deduplication, so collapsing duplicates shows up as throughput
/// gained rather than work hidden.
pub fn measure_strategy(
    config: &RunConfig,
    strategy: &StrategySpec,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    outcomes: &HashMap<String, bool>,
) -> Result<ThroughputReport> {
    let prune_spec = match &strategy.verifier {
        Some(vid) => Some(
            config
                .verifier(vid)
                .ok_or_else(|| Error::Config(format!("unknown verifier `{vid}`")))?
                .clone(),
        ),
        None => None,
    };
    let seed = match &strategy.score {
        ScorePart::Vote => None,
        ScorePart::Scorer(sid) => Some(load_scorer_seed(config, sid)?),
    };
    let label = format!("bench-{}", strategy.id.replace('+', "-"));
    let policy = config.execution_policy(&label);
    let programs = raw_program_count(pools);
    let mut workload = || {
        run_inference_once(
            strategy,
            prune_spec.as_ref(),
            seed.as_ref(),
            problems,
            pools,
            outcomes,
            &policy,
        )
    };
    measure_pps(&mut workload, programs, config.runs)
}
