//! Ranking strategies and the best-of-k selection metric.
//!
//! A ranking orders one problem's deduplicated pool by a primary score with
//! deterministic tiebreaks, then expands per-candidate outcomes into the
//! flat vector consumed by [`best_of_k`]. `best_of_k(alpha, k)` is the
//! probability that the top-ranked member of a uniformly random k-subset of
//! the pool is correct, computed in closed form; [`best_of_k_oracle`]
//! recomputes it by enumerating every subset and exists to cross-check the
//! closed form on small pools.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{expand_alpha, Candidate, Ranking, VerdictRecord};
use crate::verifiers::{keep_for_pruning, VerifierKind, VerifierSpec};

/// Where a ranking's primary score comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryScore {
    /// A scorer's output (learned or remote).
    Scorer,
    /// A verifier's own score (parse bit, lint count, tests passed).
    VerifierScore,
}

/// A single tiebreak comparison, applied in order after the primary score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiebreakKey {
    DupCountDesc,
    CandidateIdAsc,
}

/// Sort policy for a ranking. The tiebreak chain must be non-empty and end
/// with the candidate-id key so that orderings are total and deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankStrategy {
    pub id: String,
    pub primary: PrimaryScore,
    pub tiebreak: Vec<TiebreakKey>,
}

impl RankStrategy {
    pub fn new(id: impl Into<String>, primary: PrimaryScore) -> Self {
        RankStrategy {
            id: id.into(),
            primary,
            tiebreak: vec![TiebreakKey::DupCountDesc, TiebreakKey::CandidateIdAsc],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.tiebreak.last() {
            Some(TiebreakKey::CandidateIdAsc) => Ok(()),
            _ => Err(Error::Config(format!(
                "strategy `{}`: tiebreak chain must end with candidate_id_asc",
                self.id
            ))),
        }
    }
}

/// What to do when pruning removes every candidate of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Rank the unpruned pool by the prune verifier's own score and flag it.
    VerifierMajorityVote,
    /// Fail the problem instead.
    Error,
}

/// Configuration for [`prune_then_rank`]: which verifier prunes, how the
/// surviving pool is labeled, and what happens when nothing survives. The
/// prune verifier must be cheaper than a full test run; pruning with the
/// full suite would make the scorer irrelevant.
#[derive(Debug, Clone)]
pub struct PruneThenRankConfig {
    pub strategy_id: String,
    pub prune: VerifierSpec,
    pub fallback: FallbackPolicy,
}

impl PruneThenRankConfig {
    pub fn validate(&self) -> Result<()> {
        self.prune.validate()?;
        if self.prune.kind == VerifierKind::FullTests {
            return Err(Error::Config(format!(
                "strategy `{}`: prune verifier `{}` runs the full suite; \
                 pruning must use a weaker verifier",
                self.strategy_id, self.prune.id
            )));
        }
        Ok(())
    }
}

/// Probability that the best-ranked member of a uniformly random k-subset
/// of the pool is correct.
///
/// `alpha` is the expanded outcome vector in rank order (index 0 = top).
/// Position i leads a subset in C(n-i-1, k-1) of the C(n, k) subsets, so
/// the result is the alpha-weighted sum of those ratios. Weights are
/// carried iteratively (`w0 = k/n`, `w[i+1] = w[i]·(n-k-i)/(n-1-i)`), which
/// stays finite where factorials would overflow. `k = 1` gives the mean of
/// alpha, `k = n` gives `alpha[0]`.
pub fn best_of_k(alpha: &[u8], k: usize) -> Result<f64> {
    validate_alpha(alpha)?;
    let n = alpha.len();
    if k < 1 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut weight = k as f64 / n as f64;
    let mut total = 0.0;
    for (i, &a) in alpha.iter().enumerate().take(n - k + 1) {
        if a == 1 {
            total += weight;
        }
        let den = (n - 1 - i) as f64;
        if den > 0.0 {
            weight *= (n - k - i) as f64 / den;
        }
    }
    // the result is a convex combination of alpha entries; only float
    // drift in the weight recurrence can land outside [0, 1]
    Ok(total.clamp(0.0, 1.0))
}

/// [`best_of_k`] with k clamped to the pool size, for pools that pruning
/// has shrunk below the requested k.
pub fn best_of_k_clamped(alpha: &[u8], k: usize) -> Result<f64> {
    if alpha.is_empty() || k < 1 {
        return Err(Error::KOutOfRange { k, n: alpha.len() });
    }
    best_of_k(alpha, k.min(alpha.len()))
}

/// Exhaustive reference for [`best_of_k`]: enumerates every k-subset of
/// pool positions and averages the outcome of each subset's best-ranked
/// member. Cost is C(n, k) subsets; intended for small pools only.
pub fn best_of_k_oracle(alpha: &[u8], k: usize) -> Result<f64> {
    validate_alpha(alpha)?;
    let n = alpha.len();
    if k < 1 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    let mut combo: Vec<usize> = (0..k).collect();
    let mut subsets: u64 = 0;
    let mut hits: u64 = 0;
    loop {
        subsets += 1;
        // combo is ascending, so combo[0] is the subset's best rank
        if alpha[combo[0]] == 1 {
            hits += 1;
        }
        // advance to the next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(hits as f64 / subsets as f64);
            }
            i -= 1;
            if combo[i] != i + n - k {
                break;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

fn validate_alpha(alpha: &[u8]) -> Result<()> {
    for (index, &value) in alpha.iter().enumerate() {
        if value > 1 {
            return Err(Error::BadAlpha { index, value });
        }
    }
    Ok(())
}

/// Orders a pool by score (descending) with the strategy's tiebreaks and
/// expands ground-truth outcomes into the ranking's alpha vector. Every
/// candidate must have a finite score and an outcome; errors name the
/// offending candidate.
pub fn rank(
    problem_id: &str,
    pool: &[Candidate],
    scores: &HashMap<String, f64>,
    outcomes: &HashMap<String, bool>,
    strategy: &RankStrategy,
) -> Result<Ranking> {
    strategy.validate()?;
    let mut entries: Vec<(&Candidate, f64, bool)> = Vec::with_capacity(pool.len());
    for candidate in pool {
        let score = *scores.get(&candidate.id).ok_or_else(|| Error::MissingScore {
            candidate_id: candidate.id.clone(),
        })?;
        if !score.is_finite() {
            return Err(Error::NonFinite(format!("score for candidate `{}`", candidate.id)));
        }
        let outcome = *outcomes
            .get(&candidate.id)
            .ok_or_else(|| Error::MissingOutcome {
                candidate_id: candidate.id.clone(),
            })?;
        entries.push((candidate, score, outcome));
    }
    entries.sort_by(|a, b| {
        let mut ord = b.1.partial_cmp(&a.1).expect("scores validated finite");
        for key in &strategy.tiebreak {
            if ord != std::cmp::Ordering::Equal {
                break;
            }
            ord = match key {
                TiebreakKey::DupCountDesc => b.0.dup_count.cmp(&a.0.dup_count),
                TiebreakKey::CandidateIdAsc => a.0.id.cmp(&b.0.id),
            };
        }
        ord
    });
    let ranked: Vec<(&Candidate, bool)> = entries.iter().map(|(c, _, o)| (*c, *o)).collect();
    Ok(Ranking {
        problem_id: problem_id.to_string(),
        strategy_id: strategy.id.clone(),
        ordered: ranked.iter().map(|(c, _)| c.id.clone()).collect(),
        alpha: expand_alpha(&ranked),
        fallback_used: false,
    })
}

/// Ranks a pool by a verifier's own score, duplicate count breaking ties.
/// This is the baseline used when no scorer is in play and the fallback
/// when pruning empties a pool.
pub fn majority_vote_rank(
    problem_id: &str,
    pool: &[Candidate],
    verdicts: &HashMap<String, VerdictRecord>,
    outcomes: &HashMap<String, bool>,
    strategy_id: &str,
) -> Result<Ranking> {
    let mut scores = HashMap::with_capacity(pool.len());
    for candidate in pool {
        let verdict = verdicts.get(&candidate.id).ok_or_else(|| Error::MissingVerdict {
            candidate_id: candidate.id.clone(),
            verifier_id: "<vote source>".to_string(),
        })?;
        scores.insert(candidate.id.clone(), verdict.score);
    }
    rank(
        problem_id,
        pool,
        &scores,
        outcomes,
        &RankStrategy::new(strategy_id, PrimaryScore::VerifierScore),
    )
}

/// Drops candidates the prune verifier rejects, then ranks the survivors by
/// scorer score. If nothing survives, the configured fallback either ranks
/// the whole pool by the prune verifier's score (marked `fallback_used`) or
/// fails the problem.
pub fn prune_then_rank(
    problem_id: &str,
    pool: &[Candidate],
    prune_verdicts: &HashMap<String, VerdictRecord>,
    scores: &HashMap<String, f64>,
    outcomes: &HashMap<String, bool>,
    config: &PruneThenRankConfig,
) -> Result<Ranking> {
    config.validate()?;
    let mut survivors: Vec<Candidate> = Vec::with_capacity(pool.len());
    for candidate in pool {
        let verdict = prune_verdicts
            .get(&candidate.id)
            .ok_or_else(|| Error::MissingVerdict {
                candidate_id: candidate.id.clone(),
                verifier_id: config.prune.id.clone(),
            })?;
        if keep_for_pruning(config.prune.kind, verdict) {
            survivors.push(candidate.clone());
        }
    }
    if survivors.is_empty() {
        return match config.fallback {
            FallbackPolicy::VerifierMajorityVote => {
                let mut ranking = majority_vote_rank(
                    problem_id,
                    pool,
                    prune_verdicts,
                    outcomes,
                    &config.strategy_id,
                )?;
                ranking.fallback_used = true;
                Ok(ranking)
            }
            FallbackPolicy::Error => Err(Error::Config(format!(
                "strategy `{}`: verifier `{}` pruned every candidate of problem `{}`",
                config.strategy_id, config.prune.id, problem_id
            ))),
        };
    }
    rank(
        problem_id,
        &survivors,
        scores,
        outcomes,
        &RankStrategy::new(&config.strategy_id, PrimaryScore::Scorer),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifiers::tests_support::{subset_spec, subset_verdict};

    fn candidate(id: &str, dup: usize) -> Candidate {
        Candidate {
            id: id.into(),
            problem_id: "p".into(),
            source: format!("src {id}"),
            dup_count: dup,
        }
    }

    #[test]
    fn best_of_two_matches_hand_computation() {
        // subsets of [0,1,0,1,0]: 4 of 10 are led by a correct entry
        let got = best_of_k(&[0, 1, 0, 1, 0], 2).unwrap();
        assert!((got - 0.4).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn best_of_one_is_mean_and_best_of_n_is_top() {
        let alpha = [1, 0, 0, 1];
        assert!((best_of_k(&alpha, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(best_of_k(&alpha, 4).unwrap(), 1.0);
        assert_eq!(best_of_k(&[0, 1, 1, 1], 4).unwrap(), 0.0);
    }

    #[test]
    fn k_out_of_range_is_an_error_and_clamped_variant_caps() {
        assert!(matches!(
            best_of_k(&[1, 0], 3),
            Err(Error::KOutOfRange { k: 3, n: 2 })
        ));
        assert!(matches!(
            best_of_k(&[1, 0], 0),
            Err(Error::KOutOfRange { k: 0, n: 2 })
        ));
        assert_eq!(best_of_k_clamped(&[1, 0], 64).unwrap(), 1.0);
        assert!(best_of_k_clamped(&[], 1).is_err());
    }

    #[test]
    fn oracle_agrees_with_closed_form_on_a_spot_check() {
        let alpha = [0, 1, 1, 0, 1, 0, 0, 1];
        for k in 1..=alpha.len() {
            let fast = best_of_k(&alpha, k).unwrap();
            let slow = best_of_k_oracle(&alpha, k).unwrap();
            assert!((fast - slow).abs() < 1e-12, "k={k}: {fast} vs {slow}");
        }
    }

    #[test]
    fn rejects_alpha_entries_outside_zero_one() {
        assert!(matches!(
            best_of_k(&[0, 2, 1], 1),
            Err(Error::BadAlpha { index: 1, value: 2 })
        ));
    }

    #[test]
    fn rank_breaks_score_ties_by_dup_count_then_id() {
        let pool = vec![candidate("a", 1), candidate("b", 3), candidate("c", 1)];
        let scores = HashMap::from([
            ("a".to_string(), 2.0),
            ("b".to_string(), 2.0),
            ("c".to_string(), 1.0),
        ]);
        let outcomes = HashMap::from([
            ("a".to_string(), true),
            ("b".to_string(), false),
            ("c".to_string(), true),
        ]);
        let strategy = RankStrategy::new("s", PrimaryScore::Scorer);
        let ranking = rank("p", &pool, &scores, &outcomes, &strategy).unwrap();
        assert_eq!(ranking.ordered, ["b", "a", "c"]);
        assert_eq!(ranking.alpha, vec![0, 0, 0, 1, 1]);
        assert!(!ranking.fallback_used);
    }

    #[test]
    fn rank_requires_a_score_for_every_candidate() {
        let pool = vec![candidate("a", 1)];
        let outcomes = HashMap::from([("a".to_string(), true)]);
        let err = rank(
            "p",
            &pool,
            &HashMap::new(),
            &outcomes,
            &RankStrategy::new("s", PrimaryScore::Scorer),
        )
        .unwrap_err();
        match err {
            Error::MissingScore { candidate_id } => assert_eq!(candidate_id, "a"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn prune_keeps_only_passing_candidates() {
        let pool: Vec<Candidate> = (0..5).map(|i| candidate(&format!("c{i}"), 1)).collect();
        let mut verdicts = HashMap::new();
        for (i, c) in pool.iter().enumerate() {
            // c2 and c4 pass one subset test, the rest pass none
            let passed = usize::from(i == 2 || i == 4);
            verdicts.insert(c.id.clone(), subset_verdict(&c.id, "subset1", passed, 1, false));
        }
        let scores: HashMap<String, f64> = pool
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.clone(), i as f64))
            .collect();
        let outcomes: HashMap<String, bool> =
            pool.iter().map(|c| (c.id.clone(), true)).collect();
        let config = PruneThenRankConfig {
            strategy_id: "subset1+linear".into(),
            prune: subset_spec("subset1", 1),
            fallback: FallbackPolicy::VerifierMajorityVote,
        };
        let ranking =
            prune_then_rank("p", &pool, &verdicts, &scores, &outcomes, &config).unwrap();
        assert_eq!(ranking.ordered, ["c4", "c2"]);
        assert!(!ranking.fallback_used);
    }

    #[test]
    fn empty_survivor_set_falls_back_to_verifier_scores() {
        let pool: Vec<Candidate> = (0..3).map(|i| candidate(&format!("c{i}"), 1)).collect();
        let mut verdicts = HashMap::new();
        for c in &pool {
            verdicts.insert(c.id.clone(), subset_verdict(&c.id, "subset1", 0, 1, false));
        }
        let outcomes: HashMap<String, bool> =
            pool.iter().map(|c| (c.id.clone(), false)).collect();
        let config = PruneThenRankConfig {
            strategy_id: "subset1+linear".into(),
            prune: subset_spec("subset1", 1),
            fallback: FallbackPolicy::VerifierMajorityVote,
        };
        let ranking =
            prune_then_rank("p", &pool, &verdicts, &HashMap::new(), &outcomes, &config).unwrap();
        assert!(ranking.fallback_used);
        // all verifier scores are 0, so the ordering is the id tiebreak
        assert_eq!(ranking.ordered, ["c0", "c1", "c2"]);

        let strict = PruneThenRankConfig {
            fallback: FallbackPolicy::Error,
            ..config
        };
        assert!(
            prune_then_rank("p", &pool, &verdicts, &HashMap::new(), &outcomes, &strict).is_err()
        );
    }

    #[test]
    fn pruning_with_the_full_suite_is_rejected() {
        let config = PruneThenRankConfig {
            strategy_id: "bad".into(),
            prune: VerifierSpec::full("full"),
            fallback: FallbackPolicy::Error,
        };
        assert!(config.validate().is_err());
    }
}
