//! Run configuration: command-line arguments resolved against the cascade
//! config document and cross-checked before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use prunerank::error::{Error, Result};
use prunerank::sandbox::ExecutionPolicy;
use prunerank::verifiers::{VerifierKind, VerifierSpec};

/// Default token budget for remote scorer batches when the cascade config
/// leaves it unset.
pub const DEFAULT_TOKEN_BUDGET: u64 = 2048;

/// How a configured scorer produces scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Linear,
    Remote,
}

/// One scorer entry in the cascade config document. Linear scorers load
/// their weights from `params_path`; remote scorers call `endpoint`.
#[derive(Debug, Clone, Deserialize)]
pub struct ScorerEntry {
    pub id: String,
    pub kind: ScorerKind,
    #[serde(default)]
    pub params_path: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub token_budget: Option<u64>,
}

impl ScorerEntry {
    fn validate(&self) -> Result<()> {
        check_id("scorer", &self.id)?;
        match self.kind {
            ScorerKind::Linear => {
                if self.params_path.is_none() {
                    return Err(Error::Config(format!(
                        "scorer `{}` is linear but has no params_path",
                        self.id
                    )));
                }
            }
            ScorerKind::Remote => {
                if self.endpoint.as_ref().is_none_or(String::is_empty) {
                    return Err(Error::Config(format!(
                        "scorer `{}` is remote but has no endpoint",
                        self.id
                    )));
                }
                if self.token_budget == Some(0) {
                    return Err(Error::Config(format!(
                        "scorer `{}` has a zero token budget",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn token_budget(&self) -> u64 {
        self.token_budget.unwrap_or(DEFAULT_TOKEN_BUDGET)
    }
}

/// The cascade config document: the ordered verifier list plus the scorers
/// strategies may reference.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct CascadeConfig {
    pub verifiers: Vec<VerifierSpec>,
    #[serde(default)]
    pub scorers: Vec<ScorerEntry>,
}

/// Loads and validates a cascade config JSON file.
pub fn load_cascade(path: &Path) -> Result<CascadeConfig> {
    let text = fs::read_to_string(path).map_err(|e| {
        Error::Config(format!("cannot read cascade config `{}`: {e}", path.display()))
    })?;
    let cascade: CascadeConfig = serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("bad cascade config `{}`: {e}", path.display()))
    })?;
    cascade.validate()?;
    Ok(cascade)
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.verifiers.is_empty() {
            return Err(Error::Config("cascade config lists no verifiers".into()));
        }
        for (ix, spec) in self.verifiers.iter().enumerate() {
            spec.validate()?;
            check_id("verifier", &spec.id)?;
            if self.verifiers[..ix].iter().any(|other| other.id == spec.id) {
                return Err(Error::Config(format!(
                    "cascade config repeats verifier id `{}`",
                    spec.id
                )));
            }
        }
        for (ix, entry) in self.scorers.iter().enumerate() {
            entry.validate()?;
            if self.scorers[..ix].iter().any(|other| other.id == entry.id) {
                return Err(Error::Config(format!(
                    "cascade config repeats scorer id `{}`",
                    entry.id
                )));
            }
        }
        Ok(())
    }
}

/// Ids land in file names and strategy strings, so they are restricted to
/// a filename-safe alphabet with no `+` or `,`.
fn check_id(what: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} id `{id}` must be non-empty and use only letters, digits, `-`, `_`, `.`"
        )))
    }
}

/// Right-hand side of a strategy: what orders the pool.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScorePart {
    /// Order by the named verifier's own score, duplicates breaking ties.
    Vote,
    /// Order by a configured scorer's output.
    Scorer(String),
}

/// A parsed `--strategy` value of the form `<prune|none>+<scorer|vote>`.
///
/// `verifier` is the left-hand side: the prune filter when the right-hand
/// side is a scorer, or the vote source when it is `vote`. `none` on the
/// left means the whole pool is ranked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrategySpec {
    pub id: String,
    pub verifier: Option<String>,
    pub score: ScorePart,
}

impl StrategySpec {
    pub fn parse(raw: &str) -> Result<StrategySpec> {
        let bad = |why: &str| {
            Error::Config(format!(
                "strategy `{raw}` {why}; expected `<prune|none>+<scorer|vote>`"
            ))
        };
        let Some((left, right)) = raw.split_once('+') else {
            return Err(bad("has no `+` separator"));
        };
        if left.is_empty() || right.is_empty() || right.contains('+') {
            return Err(bad("is malformed"));
        }
        let verifier = match left {
            "none" => None,
            other => Some(other.to_string()),
        };
        let score = match right {
            "vote" => ScorePart::Vote,
            other => ScorePart::Scorer(other.to_string()),
        };
        if verifier.is_none() && score == ScorePart::Vote {
            return Err(Error::Config(format!(
                "strategy `{raw}`: voting needs a verifier on the left-hand side"
            )));
        }
        Ok(StrategySpec {
            id: raw.to_string(),
            verifier,
            score,
        })
    }
}

/// Everything a subcommand needs, resolved and cross-checked. Commands
/// that skip a piece leave it at its default (empty cascade, no
/// candidates path, no strategies).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problems_path: PathBuf,
    pub candidates_path: Option<PathBuf>,
    pub cascade: CascadeConfig,
    pub strategies: Vec<StrategySpec>,
    pub ks: Vec<usize>,
    pub runs: usize,
    pub measure: bool,
    pub fail_fast: bool,
    pub keep_scratch: bool,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl RunConfig {
    /// Checks strategy references against the cascade and the numeric
    /// arguments for sanity. Call once after assembly.
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("--runs must be at least 1".into()));
        }
        for &k in &self.ks {
            if k == 0 {
                return Err(Error::Config("--k values must be at least 1".into()));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("--epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("--learning-rate must be positive".into()));
        }
        for (ix, strategy) in self.strategies.iter().enumerate() {
            if self.strategies[..ix].iter().any(|other| other.id == strategy.id) {
                return Err(Error::Config(format!(
                    "strategy `{}` is listed twice",
                    strategy.id
                )));
            }
            if let Some(vid) = &strategy.verifier {
                let spec = self.verifier(vid).ok_or_else(|| {
                    Error::Config(format!(
                        "strategy `{}` references verifier `{vid}` not in the cascade config",
                        strategy.id
                    ))
                })?;
                let prunes = matches!(strategy.score, ScorePart::Scorer(_));
                if prunes && spec.kind == VerifierKind::FullTests {
                    return Err(Error::Config(format!(
                        "strategy `{}` prunes with the full suite; pruning must use a weaker verifier",
                        strategy.id
                    )));
                }
            }
            if let ScorePart::Scorer(sid) = &strategy.score {
                if self.scorer(sid).is_none() {
                    return Err(Error::Config(format!(
                        "strategy `{}` references scorer `{sid}` not in the cascade config",
                        strategy.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn verifier(&self, id: &str) -> Option<&VerifierSpec> {
        self.cascade.verifiers.iter().find(|v| v.id == id)
    }

    pub fn scorer(&self, id: &str) -> Option<&ScorerEntry> {
        self.cascade.scorers.iter().find(|s| s.id == id)
    }

    /// The cascade's single full-suite verifier, the ground-truth source.
    pub fn full_verifier(&self) -> Result<&VerifierSpec> {
        let mut full = self
            .cascade
            .verifiers
            .iter()
            .filter(|v| v.kind == VerifierKind::FullTests);
        match (full.next(), full.next()) {
            (Some(spec), None) => Ok(spec),
            (None, _) => Err(Error::Config(
                "cascade config has no full-suite verifier to provide ground truth".into(),
            )),
            (Some(_), Some(_)) => Err(Error::Config(
                "cascade config has more than one full-suite verifier".into(),
            )),
        }
    }

    /// First verifier of a kind, in cascade order.
    pub fn first_of_kind(&self, kind: VerifierKind) -> Option<&VerifierSpec> {
        self.cascade.verifiers.iter().find(|v| v.kind == kind)
    }

    pub fn verdict_path(&self, verifier_id: &str) -> PathBuf {
        self.out_dir.join(format!("verdicts-{verifier_id}.jsonl"))
    }

    /// Execution policy with its scratch space under the output directory,
    /// namespaced by `label` so measurement runs never share a pool dir.
    pub fn execution_policy(&self, label: &str) -> ExecutionPolicy {
        let mut policy = ExecutionPolicy::new(self.out_dir.join("scratch").join(label));
        policy.keep_scratch = self.keep_scratch;
        policy
    }
}
