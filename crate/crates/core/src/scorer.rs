//! Candidate scorers: a trainable linear model over surface features and a
//! client for a remote scoring service.
//!
//! The linear scorer is trained on winner/loser pairs with the standard
//! pairwise-preference objective: minimize the mean of
//! `-ln sigmoid(score(winner) - score(loser))`. At zero parameters every
//! pair contributes `ln 2`. The bias cancels inside the score difference,
//! so its exact gradient is zero; it is kept because scores are also used
//! standalone. Training is plain full-batch gradient descent from zero
//! initialization and is deterministic for a given seed (the seed fixes the
//! summation order).
//!
//! Remote scoring speaks newline-delimited JSON over a TCP stream, one
//! request per candidate batch. Batches are packed to a token budget with
//! first-fit-decreasing so a fixed-size service sees as few round trips as
//! possible.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, Problem, VerdictRecord};

/// Number of features in the fixed schema.
pub const FEATURE_DIM: usize = 5;

/// Identifier of the fixed feature schema:
/// `[chars/1000, lines/100, lint score, subset pass fraction, tokens/1000]`.
pub const FEATURE_SCHEMA_ID: &str = "surface-v1";

/// A candidate's feature vector under a named schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [f64; FEATURE_DIM],
    pub schema_id: String,
}

/// Weights and bias of the linear scorer. Serialized as the params JSON
/// document (`schema_id`, `weights`, `bias`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearScorerParams {
    pub schema_id: String,
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearScorerParams {
    pub fn zeros() -> Self {
        LinearScorerParams {
            schema_id: FEATURE_SCHEMA_ID.to_string(),
            weights: vec![0.0; FEATURE_DIM],
            bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != FEATURE_DIM {
            return Err(Error::Config(format!(
                "scorer params have {} weights, schema `{}` needs {}",
                self.weights.len(),
                self.schema_id,
                FEATURE_DIM
            )));
        }
        if !self.bias.is_finite() || self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("scorer params".into()));
        }
        Ok(())
    }
}

/// Rough token count used for batch packing: one token per four chars,
/// rounded up.
pub fn token_estimate(source: &str) -> u64 {
    (source.chars().count() as u64).div_ceil(4)
}

/// Optional verifier signals folded into a candidate's features.
#[derive(Debug, Clone, Copy, Default)]
pub struct FeatureSignals<'a> {
    pub lint: Option<&'a VerdictRecord>,
    pub subset: Option<&'a VerdictRecord>,
}

/// Builds the fixed feature vector for one candidate. Verifier signals are
/// optional; absent ones contribute 0, so features degrade gracefully when
/// only part of a cascade has run. Two candidates with identical sources
/// and identical signals always get identical features.
pub fn extract_features(
    _problem: &Problem,
    candidate: &Candidate,
    signals: FeatureSignals<'_>,
) -> FeatureVector {
    let chars = candidate.source.chars().count() as f64;
    let lines = candidate.source.lines().count() as f64;
    let lint_score = signals.lint.map(|v| v.score).unwrap_or(0.0);
    let subset_fraction = signals
        .subset
        .filter(|v| v.tests_run > 0)
        .map(|v| v.tests_passed as f64 / v.tests_run as f64)
        .unwrap_or(0.0);
    let tokens = token_estimate(&candidate.source) as f64;
    FeatureVector {
        values: [
            chars / 1000.0,
            lines / 100.0,
            lint_score,
            subset_fraction,
            tokens / 1000.0,
        ],
        schema_id: FEATURE_SCHEMA_ID.to_string(),
    }
}

/// Linear score: dot product plus bias.
pub fn score(params: &LinearScorerParams, features: &FeatureVector) -> Result<f64> {
    params.validate()?;
    if features.schema_id != params.schema_id {
        return Err(Error::Config(format!(
            "feature schema `{}` does not match scorer schema `{}`",
            features.schema_id, params.schema_id
        )));
    }
    let mut total = params.bias;
    for (w, x) in params.weights.iter().zip(features.values.iter()) {
        total += w * x;
    }
    Ok(total)
}

/// A training example: features of the preferred and rejected candidate.
#[derive(Debug, Clone)]
pub struct FeaturePair {
    pub winner: FeatureVector,
    pub loser: FeatureVector,
}

/// Gradient of the preference loss in (weights, bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(-d))` without overflow for large |d|.
fn softplus_neg(d: f64) -> f64 {
    if d > 0.0 {
        (-d).exp().ln_1p()
    } else {
        -d + d.exp().ln_1p()
    }
}

/// Mean pairwise-preference loss and its exact gradient.
///
/// For each pair with score difference `d`, the loss term is
/// `ln(1 + exp(-d))` and the weight gradient term is
/// `(sigmoid(d) - 1) * (winner_features - loser_features)`. The bias
/// gradient is exactly zero because the bias cancels in `d`.
pub fn bt_loss_and_grad(
    params: &LinearScorerParams,
    pairs: &[FeaturePair],
) -> Result<(f64, Gradient)> {
    params.validate()?;
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; FEATURE_DIM];
    for pair in pairs {
        for side in [&pair.winner, &pair.loser] {
            if side.schema_id != params.schema_id {
                return Err(Error::Config(format!(
                    "pair feature schema `{}` does not match scorer schema `{}`",
                    side.schema_id, params.schema_id
                )));
            }
            if side.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("training pair features".into()));
            }
        }
        let mut d = 0.0;
        for j in 0..FEATURE_DIM {
            d += params.weights[j] * (pair.winner.values[j] - pair.loser.values[j]);
        }
        loss += softplus_neg(d);
        let coeff = sigmoid(d) - 1.0;
        for (j, g) in grad_w.iter_mut().enumerate() {
            *g += coeff * (pair.winner.values[j] - pair.loser.values[j]);
        }
    }
    let n = pairs.len() as f64;
    loss /= n;
    for g in grad_w.iter_mut() {
        *g /= n;
    }
    Ok((
        loss,
        Gradient {
            weights: grad_w,
            bias: 0.0,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

/// Result of a training run, with the loss before and after.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: LinearScorerParams,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Trains the linear scorer with full-batch gradient descent from zero
/// initialization. Divergence (non-finite loss or parameters) is an error
/// naming the epoch.
pub fn train_linear_scorer(pairs: &[FeaturePair], config: &TrainConfig) -> Result<TrainOutcome> {
    if pairs.is_empty() {
        return Err(Error::Config("no training pairs".into()));
    }
    if !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(Error::Config("learning rate must be positive".into()));
    }
    let mut order: Vec<&FeaturePair> = pairs.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let shuffled: Vec<FeaturePair> = order.into_iter().cloned().collect();

    let mut params = LinearScorerParams::zeros();
    params.schema_id = shuffled[0].winner.schema_id.clone();
    let (initial_loss, _) = bt_loss_and_grad(&params, &shuffled)?;
    let mut final_loss = initial_loss;
    for epoch in 0..config.epochs {
        let (loss, grad) = bt_loss_and_grad(&params, &shuffled)?;
        if !loss.is_finite() {
            return Err(Error::TrainDiverged {
                epoch,
                message: "loss is not finite".into(),
            });
        }
        for j in 0..FEATURE_DIM {
            params.weights[j] -= config.learning_rate * grad.weights[j];
        }
        params.bias -= config.learning_rate * grad.bias;
        if params.weights.iter().any(|w| !w.is_finite()) || !params.bias.is_finite() {
            return Err(Error::TrainDiverged {
                epoch,
                message: "parameters are not finite".into(),
            });
        }
        final_loss = bt_loss_and_grad(&params, &shuffled)?.0;
    }
    Ok(TrainOutcome {
        params,
        initial_loss,
        final_loss,
        epochs: config.epochs,
    })
}

/// Fraction of pairs where the winner outscores the loser. Ties count as
/// misses.
pub fn pairwise_accuracy(params: &LinearScorerParams, pairs: &[FeaturePair]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("no pairs to evaluate".into()));
    }
    let mut correct = 0usize;
    for pair in pairs {
        if score(params, &pair.winner)? > score(params, &pair.loser)? {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Anything that can score a batch of candidates for a problem. Higher is
/// better. Implementations must be deterministic for identical inputs.
pub trait Scorer {
    fn id(&self) -> &str;
    fn score_batch(&self, problem: &Problem, candidates: &[Candidate]) -> Result<Vec<f64>>;
}

/// The trained linear model plus optional per-candidate verifier signals
/// (lint scores, subset pass fractions) to feed the feature schema.
pub struct LinearScorer {
    id: String,
    params: LinearScorerParams,
    lint: HashMap<String, VerdictRecord>,
    subset: HashMap<String, VerdictRecord>,
}

impl LinearScorer {
    pub fn new(id: impl Into<String>, params: LinearScorerParams) -> Result<Self> {
        params.validate()?;
        Ok(LinearScorer {
            id: id.into(),
            params,
            lint: HashMap::new(),
            subset: HashMap::new(),
        })
    }

    pub fn with_signals(
        mut self,
        lint: HashMap<String, VerdictRecord>,
        subset: HashMap<String, VerdictRecord>,
    ) -> Self {
        self.lint = lint;
        self.subset = subset;
        self
    }

    pub fn params(&self) -> &LinearScorerParams {
        &self.params
    }
}

impl Scorer for LinearScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_batch(&self, problem: &Problem, candidates: &[Candidate]) -> Result<Vec<f64>> {
        candidates
            .iter()
            .map(|candidate| {
                let signals = FeatureSignals {
                    lint: self.lint.get(&candidate.id),
                    subset: self.subset.get(&candidate.id),
                };
                score(&self.params, &extract_features(problem, candidate, signals))
            })
            .collect()
    }
}

/// One item to place into a token-budget batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchItem {
    pub id: String,
    pub tokens: u64,
}

/// The result of packing: batches of item ids, the budget they were packed
/// under, each item's token count, and any items that exceeded the budget
/// on their own (each shipped as a singleton batch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batches: Vec<Vec<String>>,
    pub token_budget: u64,
    pub token_counts: BTreeMap<String, u64>,
    pub over_budget: Vec<String>,
}

/// Packs items into batches with first-fit-decreasing: items are taken in
/// descending token order and each goes into the first batch with room.
/// An item larger than the budget gets its own batch and is flagged rather
/// than dropped.
pub fn pack_batches(items: &[BatchItem], token_budget: u64) -> Result<BatchPlan> {
    if token_budget == 0 {
        return Err(Error::Config("token budget must be positive".into()));
    }
    let mut token_counts = BTreeMap::new();
    for item in items {
        if item.tokens == 0 {
            return Err(Error::Config(format!(
                "batch item `{}` has a zero token count",
                item.id
            )));
        }
        if token_counts.insert(item.id.clone(), item.tokens).is_some() {
            return Err(Error::Config(format!("duplicate batch item id `{}`", item.id)));
        }
    }

    let mut order: Vec<&BatchItem> = items.iter().collect();
    order.sort_by_key(|item| std::cmp::Reverse(item.tokens));

    let mut batches: Vec<Vec<String>> = Vec::new();
    let mut loads: Vec<u64> = Vec::new();
    let mut over_budget = Vec::new();
    for item in order {
        if item.tokens > token_budget {
            batches.push(vec![item.id.clone()]);
            loads.push(item.tokens);
            over_budget.push(item.id.clone());
            continue;
        }
        match loads
            .iter()
            .position(|&load| load + item.tokens <= token_budget)
        {
            Some(slot) => {
                batches[slot].push(item.id.clone());
                loads[slot] += item.tokens;
            }
            None => {
                batches.push(vec![item.id.clone()]);
                loads.push(item.tokens);
            }
        }
    }
    Ok(BatchPlan {
        batches,
        token_budget,
        token_counts,
        over_budget,
    })
}

/// Retry policy for remote scoring.
#[derive(Debug, Clone)]
pub struct RemoteRetry {
    pub attempts: u32,
    pub base_backoff: Duration,
    pub io_timeout: Duration,
}

impl Default for RemoteRetry {
    fn default() -> Self {
        RemoteRetry {
            attempts: 3,
            base_backoff: Duration::from_millis(100),
            io_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    request_id: &'a str,
    problem: RemoteProblem<'a>,
    candidates: Vec<RemoteCandidate<'a>>,
}

#[derive(Serialize)]
struct RemoteProblem<'a> {
    id: &'a str,
    statement: &'a str,
}

#[derive(Serialize)]
struct RemoteCandidate<'a> {
    id: &'a str,
    source: &'a str,
}

#[derive(Deserialize)]
struct RemoteResponse {
    request_id: String,
    scores: Vec<f64>,
}

static REQUEST_SEQ: AtomicU64 = AtomicU64::new(0);

/// Sends one batch to a scoring service and returns its scores, in
/// candidate order.
///
/// The wire format is one JSON document per line in each direction.
/// Transport failures (connect, read, write) are retried
/// `retry.attempts` times with backoff doubling from `base_backoff`;
/// malformed responses, mismatched request ids, and score-count mismatches
/// are protocol errors and fail immediately.
pub fn remote_score(
    endpoint: &str,
    problem: &Problem,
    batch: &[Candidate],
    retry: &RemoteRetry,
) -> Result<Vec<f64>> {
    if retry.attempts == 0 {
        return Err(Error::Config("remote retry attempts must be at least 1".into()));
    }
    let request_id = format!(
        "{}-{}",
        problem.id,
        REQUEST_SEQ.fetch_add(1, Ordering::Relaxed)
    );
    let mut attempt = 0;
    loop {
        match remote_score_once(endpoint, problem, batch, &request_id, retry.io_timeout) {
            Ok(scores) => return Ok(scores),
            Err(err @ Error::RemoteTransport(_)) => {
                attempt += 1;
                if attempt >= retry.attempts {
                    return Err(err);
                }
                thread::sleep(retry.base_backoff * 2u32.pow(attempt - 1));
            }
            Err(err) => return Err(err),
        }
    }
}

fn remote_score_once(
    endpoint: &str,
    problem: &Problem,
    batch: &[Candidate],
    request_id: &str,
    io_timeout: Duration,
) -> Result<Vec<f64>> {
    let transport = |e: std::io::Error| Error::RemoteTransport(format!("{endpoint}: {e}"));
    let addr = endpoint
        .to_socket_addrs()
        .map_err(transport)?
        .next()
        .ok_or_else(|| Error::RemoteTransport(format!("{endpoint}: no address")))?;
    let mut stream = TcpStream::connect_timeout(&addr, io_timeout).map_err(transport)?;
    stream.set_read_timeout(Some(io_timeout)).map_err(transport)?;
    stream.set_write_timeout(Some(io_timeout)).map_err(transport)?;

    let request = RemoteRequest {
        request_id,
        problem: RemoteProblem {
            id: &problem.id,
            statement: &problem.statement,
        },
        candidates: batch
            .iter()
            .map(|c| RemoteCandidate {
                id: &c.id,
                source: &c.source,
            })
            .collect(),
    };
    let mut line = serde_json::to_string(&request)?;
    line.push('\n');
    stream.write_all(line.as_bytes()).map_err(transport)?;
    stream.flush().map_err(transport)?;

    let mut reader = BufReader::new(stream);
    let mut response_line = String::new();
    let read = reader.read_line(&mut response_line).map_err(transport)?;
    if read == 0 {
        return Err(Error::RemoteTransport(format!(
            "{endpoint}: connection closed before a response"
        )));
    }
    let response: RemoteResponse = serde_json::from_str(response_line.trim_end())
        .map_err(|e| Error::RemoteProtocol(format!("bad response document: {e}")))?;
    if response.request_id != request_id {
        return Err(Error::RemoteProtocol(format!(
            "response for request `{}`, expected `{request_id}`",
            response.request_id
        )));
    }
    if response.scores.len() != batch.len() {
        return Err(Error::RemoteProtocol(format!(
            "got {} scores for {} candidates",
            response.scores.len(),
            batch.len()
        )));
    }
    if response.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::RemoteProtocol("non-finite score in response".into()));
    }
    Ok(response.scores)
}

/// Scores batches against a remote service, packing candidates to a token
/// budget first so the service sees few round trips.
pub struct RemoteScorer {
    id: String,
    endpoint: String,
    token_budget: u64,
    retry: RemoteRetry,
}

impl RemoteScorer {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>, token_budget: u64) -> Self {
        RemoteScorer {
            id: id.into(),
            endpoint: endpoint.into(),
            token_budget,
            retry: RemoteRetry::default(),
        }
    }

    pub fn with_retry(mut self, retry: RemoteRetry) -> Self {
        self.retry = retry;
        self
    }
}

impl Scorer for RemoteScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score_batch(&self, problem: &Problem, candidates: &[Candidate]) -> Result<Vec<f64>> {
        let items: Vec<BatchItem> = candidates
            .iter()
            .map(|c| BatchItem {
                id: c.id.clone(),
                // +1 keeps empty sources packable
                tokens: token_estimate(&c.source) + 1,
            })
            .collect();
        let plan = pack_batches(&items, self.token_budget)?;
        let by_id: HashMap<&str, &Candidate> =
            candidates.iter().map(|c| (c.id.as_str(), c)).collect();
        let mut scores: HashMap<String, f64> = HashMap::with_capacity(candidates.len());
        for batch_ids in &plan.batches {
            let batch: Vec<Candidate> = batch_ids
                .iter()
                .map(|id| (*by_id.get(id.as_str()).expect("packed ids come from input")).clone())
                .collect();
            let batch_scores = remote_score(&self.endpoint, problem, &batch, &self.retry)?;
            for (candidate, value) in batch.iter().zip(batch_scores) {
                scores.insert(candidate.id.clone(), value);
            }
        }
        candidates
            .iter()
            .map(|c| {
                scores
                    .get(&c.id)
                    .copied()
                    .ok_or_else(|| Error::RemoteProtocol(format!("no score for `{}`", c.id)))
            })
            .collect()
    }
}
