//! Exports winner/loser training pairs from verified candidate pools.
//!
//! A problem contributes pairs only when it has at least one correct and at
//! least one incorrect candidate after dropping candidates that fail the
//! syntax check. Each side is capped by sampling without replacement, so a
//! problem yields at most `max_per_side * max_per_side` pairs. Export is
//! deterministic for a given seed and input order.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, PreferencePair, Problem, VerdictRecord};

/// How winners and losers are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// Every sampled winner against every sampled loser.
    Cartesian,
    /// Winners and losers zipped positionally; the longer side is truncated.
    Matched,
}

/// Prompt template applied per problem. `{question}` is replaced with the
/// problem statement; `{solution}` is left verbatim for the consumer to fill.
pub const DEFAULT_PROMPT_TEMPLATE: &str = "# Question\n{question}\n\n# Proposed Solution\n```python\n{solution}\n```\n<|end_of_text|>";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairExportConfig {
    pub max_per_side: usize,
    pub pairing: PairingMode,
    pub seed: u64,
    pub prompt_template: String,
}

impl Default for PairExportConfig {
    fn default() -> Self {
        PairExportConfig {
            max_per_side: 6,
            pairing: PairingMode::Cartesian,
            seed: 0,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.to_string(),
        }
    }
}

impl PairExportConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_per_side == 0 {
            return Err(Error::Config("max_per_side must be at least 1".into()));
        }
        if !self.prompt_template.contains("{question}") {
            return Err(Error::Config(
                "prompt template has no {question} placeholder".into(),
            ));
        }
        Ok(())
    }
}

pub fn render_prompt(template: &str, statement: &str) -> String {
    template.replace("{question}", statement)
}

fn verdict_for<'a>(
    verdicts: &'a HashMap<String, VerdictRecord>,
    candidate: &Candidate,
) -> Result<&'a VerdictRecord> {
    verdicts
        .get(&candidate.id)
        .ok_or_else(|| Error::MissingVerdict {
            candidate_id: candidate.id.clone(),
            verifier_id: verdicts
                .values()
                .next()
                .map(|v| v.verifier_id.clone())
                .unwrap_or_else(|| "unknown".into()),
        })
}

/// Samples up to `max` distinct indices of `len`, returned in ascending
/// order so output order never depends on sampler internals.
fn sample_indices(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut picked = rand::seq::index::sample(rng, len, max).into_vec();
    picked.sort_unstable();
    picked
}

/// Builds preference pairs across all problems, in problem order.
///
/// `full_verdicts` must cover every syntax-passing candidate and carry
/// ground truth (`is_correct`); `syntax_verdicts` must cover every pool
/// candidate. One RNG seeded from the config drives all sampling, so a
/// given (corpus, config) always exports the same pairs.
pub fn export_pairs(
    problems: &[Problem],
    pools: &HashMap<String, Vec<Candidate>>,
    full_verdicts: &HashMap<String, VerdictRecord>,
    syntax_verdicts: &HashMap<String, VerdictRecord>,
    config: &PairExportConfig,
) -> Result<Vec<PreferencePair>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pairs = Vec::new();
    for problem in problems {
        let Some(pool) = pools.get(&problem.id) else {
            continue;
        };
        let mut correct: Vec<&Candidate> = Vec::new();
        let mut incorrect: Vec<&Candidate> = Vec::new();
        for candidate in pool {
            if verdict_for(syntax_verdicts, candidate)?.score < 1.0 {
                continue;
            }
            let full = verdict_for(full_verdicts, candidate)?;
            match full.is_correct {
                Some(true) => correct.push(candidate),
                Some(false) => incorrect.push(candidate),
                None => {
                    return Err(Error::Config(format!(
                        "verdict for `{}` from `{}` lacks ground truth",
                        candidate.id, full.verifier_id
                    )))
                }
            }
        }
        if correct.is_empty() || incorrect.is_empty() {
            continue;
        }
        let winner_idx = sample_indices(&mut rng, correct.len(), config.max_per_side);
        let loser_idx = sample_indices(&mut rng, incorrect.len(), config.max_per_side);
        let prompt = render_prompt(&config.prompt_template, &problem.statement);
        match config.pairing {
            PairingMode::Cartesian => {
                for &w in &winner_idx {
                    for &l in &loser_idx {
                        pairs.push(PreferencePair {
                            problem_id: problem.id.clone(),
                            winner_source: correct[w].source.clone(),
                            loser_source: incorrect[l].source.clone(),
                            prompt: prompt.clone(),
                        });
                    }
                }
            }
            PairingMode::Matched => {
                for (&w, &l) in winner_idx.iter().zip(loser_idx.iter()) {
                    pairs.push(PreferencePair {
                        problem_id: problem.id.clone(),
                        winner_source: correct[w].source.clone(),
                        loser_source: incorrect[l].source.clone(),
                        prompt: prompt.clone(),
                    });
                }
            }
        }
    }
    Ok(pairs)
}
