//! Weak program verifiers and their strength ordering.
//!
//! Four kinds, from cheapest to strongest: a syntax check (does the source
//! parse), a linter (diagnostic count as a score), a subset run (first N
//! tests under a low timeout), and the full test suite. Strength is a
//! partial order: syntax < lint < subset(N) < subset(N') < full for N < N'.
//! A program that passes a strong verifier must pass every weaker one, with
//! two carve-outs: lint participates in ordering but is score-only (style
//! diagnostics do not prove incorrectness), and subset timeouts are exempt
//! because a slow-but-correct program legitimately times out under the low
//! subset timeout. [`check_ordering`] audits a candidate's verdicts against
//! these implications.
//!
//! Subset pruning keeps a candidate if it passes at least one of its tests
//! or times out; the timeout half of the rule is what lets slow correct
//! programs survive to be ranked.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Candidate, Problem, VerdictRecord};
use crate::sandbox::{
    execute, expand_command, materialize_candidate, run_pool, run_thunk_pool, ExecutionPolicy,
    TestJob,
};

/// Default low timeout for subset runs, in seconds.
pub const DEFAULT_SUBSET_LOW_TIMEOUT: f64 = 2.0;

/// Default per-line rule for counting lint diagnostics: matches the
/// `path:line:col: CODE message` shape emitted by common Python linters,
/// counting error and warning codes.
pub const DEFAULT_LINT_PATTERN: &str = r":\d+:\d+: [EWF]\d+";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    Syntax,
    Lint,
    SubsetTests,
    FullTests,
}

/// Configuration of one verifier in a cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierSpec {
    pub id: String,
    pub kind: VerifierKind,
    /// Subset verifiers: how many leading tests to run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_tests: Option<usize>,
    /// Subset verifiers: per-test timeout in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_timeout: Option<f64>,
    /// Syntax verifiers: argv template for the parse check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syntax_command: Option<Vec<String>>,
    /// Lint verifiers: argv template for the linter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lint_command: Option<Vec<String>>,
    /// Lint verifiers: per-line regex counting diagnostics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lint_error_pattern: Option<String>,
}

impl VerifierSpec {
    pub fn syntax(id: impl Into<String>, command: Vec<String>) -> Self {
        VerifierSpec {
            id: id.into(),
            kind: VerifierKind::Syntax,
            n_tests: None,
            low_timeout: None,
            syntax_command: Some(command),
            lint_command: None,
            lint_error_pattern: None,
        }
    }

    pub fn lint(id: impl Into<String>, command: Vec<String>) -> Self {
        VerifierSpec {
            id: id.into(),
            kind: VerifierKind::Lint,
            n_tests: None,
            low_timeout: None,
            syntax_command: None,
            lint_command: Some(command),
            lint_error_pattern: None,
        }
    }

    pub fn subset(id: impl Into<String>, n_tests: usize, low_timeout_secs: f64) -> Self {
        VerifierSpec {
            id: id.into(),
            kind: VerifierKind::SubsetTests,
            n_tests: Some(n_tests),
            low_timeout: Some(low_timeout_secs),
            syntax_command: None,
            lint_command: None,
            lint_error_pattern: None,
        }
    }

    pub fn full(id: impl Into<String>) -> Self {
        VerifierSpec {
            id: id.into(),
            kind: VerifierKind::FullTests,
            n_tests: None,
            low_timeout: None,
            syntax_command: None,
            lint_command: None,
            lint_error_pattern: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("verifier id is empty".into()));
        }
        match self.kind {
            VerifierKind::Syntax => {
                if self.syntax_command.as_ref().is_none_or(Vec::is_empty) {
                    return Err(Error::Config(format!(
                        "syntax verifier `{}` has no syntax_command",
                        self.id
                    )));
                }
            }
            VerifierKind::Lint => {
                if self.lint_command.as_ref().is_none_or(Vec::is_empty) {
                    return Err(Error::Config(format!(
                        "lint verifier `{}` has no lint_command",
                        self.id
                    )));
                }
                Regex::new(self.lint_pattern()).map_err(|e| {
                    Error::Config(format!(
                        "lint verifier `{}` has a bad lint_error_pattern: {e}",
                        self.id
                    ))
                })?;
            }
            VerifierKind::SubsetTests => {
                if self.n_tests.is_none_or(|n| n == 0) {
                    return Err(Error::Config(format!(
                        "subset verifier `{}` needs n_tests >= 1",
                        self.id
                    )));
                }
                if self.low_timeout.is_some_and(|t| t.is_nan() || t <= 0.0) {
                    return Err(Error::Config(format!(
                        "subset verifier `{}` needs a positive low_timeout",
                        self.id
                    )));
                }
            }
            VerifierKind::FullTests => {}
        }
        Ok(())
    }

    pub fn lint_pattern(&self) -> &str {
        self.lint_error_pattern.as_deref().unwrap_or(DEFAULT_LINT_PATTERN)
    }

    pub fn low_timeout_duration(&self) -> Duration {
        Duration::from_secs_f64(self.low_timeout.unwrap_or(DEFAULT_SUBSET_LOW_TIMEOUT))
    }
}

fn tier(kind: VerifierKind) -> u8 {
    match kind {
        VerifierKind::Syntax => 0,
        VerifierKind::Lint => 1,
        VerifierKind::SubsetTests => 2,
        VerifierKind::FullTests => 3,
    }
}

/// Strict "weaker than" under the verifier strength order. Subset verifiers
/// compare by their test count; equal-strength verifiers are not weaker
/// than each other.
pub fn is_weaker(a: &VerifierSpec, b: &VerifierSpec) -> bool {
    if a.kind == VerifierKind::SubsetTests && b.kind == VerifierKind::SubsetTests {
        return a.n_tests.unwrap_or(0) < b.n_tests.unwrap_or(0);
    }
    tier(a.kind) < tier(b.kind)
}

/// Whether a candidate survives pruning under this verifier's verdict.
///
/// Syntax: must parse. Lint: no diagnostics. Subset: at least one passed
/// test, or a timeout (slow programs are kept, not judged). Full: only
/// actually-correct candidates survive.
pub fn keep_for_pruning(kind: VerifierKind, verdict: &VerdictRecord) -> bool {
    match kind {
        VerifierKind::Syntax => verdict.score >= 1.0,
        VerifierKind::Lint => verdict.score == 0.0,
        VerifierKind::SubsetTests => verdict.tests_passed >= 1 || verdict.timed_out,
        VerifierKind::FullTests => verdict.is_correct == Some(true),
    }
}

/// One breach of the strength-order implications for a candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingViolation {
    pub candidate_id: String,
    pub stronger_id: String,
    pub weaker_id: String,
    pub reason: String,
}

/// Audits one candidate's verdicts against the strength-order implications:
/// a full-suite pass implies every subset verifier keeps the candidate and
/// the syntax check passes, a subset verifier that passed all its tests
/// implies smaller subsets keep it, and any actually-executed passing test
/// implies the source parses. Lint verdicts are never implicated. Subset
/// timeouts satisfy the keep rule, so they cannot violate anything. At most
/// one violation is reported per (stronger, weaker) verifier pair.
pub fn check_ordering(
    records: &[VerdictRecord],
    cascade: &[VerifierSpec],
) -> Result<Vec<OrderingViolation>> {
    let specs: HashMap<&str, &VerifierSpec> =
        cascade.iter().map(|s| (s.id.as_str(), s)).collect();
    let candidate_id = match records.first() {
        Some(record) => record.candidate_id.clone(),
        None => return Ok(Vec::new()),
    };

    let mut syntax = Vec::new();
    let mut subsets = Vec::new();
    let mut fulls = Vec::new();
    for record in records {
        if record.candidate_id != candidate_id {
            return Err(Error::Config(format!(
                "check_ordering got verdicts for both `{candidate_id}` and `{}`",
                record.candidate_id
            )));
        }
        let spec = specs.get(record.verifier_id.as_str()).ok_or_else(|| {
            Error::Config(format!(
                "verdict references verifier `{}` absent from the cascade",
                record.verifier_id
            ))
        })?;
        match spec.kind {
            VerifierKind::Syntax => syntax.push(record),
            VerifierKind::Lint => {}
            VerifierKind::SubsetTests => subsets.push((*spec, record)),
            VerifierKind::FullTests => fulls.push(record),
        }
    }

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut violations = Vec::new();
    let mut report = |stronger: &str, weaker: &str, reason: String| {
        if seen.insert((stronger.to_string(), weaker.to_string())) {
            violations.push(OrderingViolation {
                candidate_id: candidate_id.clone(),
                stronger_id: stronger.to_string(),
                weaker_id: weaker.to_string(),
                reason,
            });
        }
    };

    for full in &fulls {
        if full.is_correct != Some(true) {
            continue;
        }
        for s in &syntax {
            if s.score < 1.0 {
                report(
                    &full.verifier_id,
                    &s.verifier_id,
                    "correct program failed the parse check".into(),
                );
            }
        }
        for (spec, subset) in &subsets {
            if !keep_for_pruning(VerifierKind::SubsetTests, subset) {
                report(
                    &full.verifier_id,
                    &subset.verifier_id,
                    format!(
                        "correct program pruned by subset({})",
                        spec.n_tests.unwrap_or(0)
                    ),
                );
            }
        }
    }

    for (spec_a, a) in &subsets {
        let pass_all = a.tests_run > 0 && a.tests_passed == a.tests_run;
        if !pass_all {
            continue;
        }
        for (spec_b, b) in &subsets {
            if spec_b.n_tests < spec_a.n_tests
                && !keep_for_pruning(VerifierKind::SubsetTests, b)
            {
                report(
                    &a.verifier_id,
                    &b.verifier_id,
                    format!(
                        "passed all of the first {} tests but was pruned by subset({})",
                        a.tests_run,
                        spec_b.n_tests.unwrap_or(0)
                    ),
                );
            }
        }
    }

    // a test can only pass if the source parsed and ran
    for record in subsets.iter().map(|(_, r)| *r).chain(fulls.iter().copied()) {
        if record.tests_passed >= 1 {
            for s in &syntax {
                if s.score < 1.0 {
                    report(
                        &record.verifier_id,
                        &s.verifier_id,
                        "program passed tests but failed the parse check".into(),
                    );
                }
            }
        }
    }

    Ok(violations)
}

/// An infrastructure failure while verifying one candidate: the tool or
/// interpreter could not run at all. Distinct from a failing verdict.
#[derive(Debug, Clone)]
pub struct VerifierFailure {
    pub candidate_id: String,
    pub message: String,
}

/// Output of running one verifier over a corpus: verdicts in pool order,
/// the wall-clock time of the pass, and any per-candidate infrastructure
/// failures (those candidates have no verdict).
#[derive(Debug)]
pub struct VerifierRun {
    pub verdicts: Vec<VerdictRecord>,
    pub wall_clock: Duration,
    pub failures: Vec<VerifierFailure>,
}

/// Runs one verifier over every candidate of every problem, on the sandbox
/// worker pool. Verdicts come back in (problems order, pool order).
pub fn run_verifier(
    spec: &VerifierSpec,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    policy: &ExecutionPolicy,
    fail_fast: bool,
) -> Result<VerifierRun> {
    spec.validate()?;
    policy.validate()?;
    match spec.kind {
        VerifierKind::Syntax => run_tool_verifier(spec, problems, pools, policy, ToolKind::Syntax),
        VerifierKind::Lint => run_tool_verifier(spec, problems, pools, policy, ToolKind::Lint),
        VerifierKind::SubsetTests | VerifierKind::FullTests => {
            run_test_verifier(spec, problems, pools, policy, fail_fast)
        }
    }
}

enum ToolKind {
    Syntax,
    Lint,
}

fn run_tool_verifier(
    spec: &VerifierSpec,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    policy: &ExecutionPolicy,
    tool: ToolKind,
) -> Result<VerifierRun> {
    let command = match tool {
        ToolKind::Syntax => spec.syntax_command.clone().expect("validated"),
        ToolKind::Lint => spec.lint_command.clone().expect("validated"),
    };
    let pattern = match tool {
        ToolKind::Syntax => None,
        ToolKind::Lint => Some(Regex::new(spec.lint_pattern()).expect("validated")),
    };

    let candidates = ordered_candidates(problems, pools)?;
    let root = policy.scratch_dir.join(&spec.id);
    let mut thunks: Vec<
        Box<dyn FnOnce() -> std::result::Result<VerdictRecord, VerifierFailure> + Send>,
    > = Vec::with_capacity(candidates.len());
    for (index, candidate) in candidates.iter().enumerate() {
        let candidate = (*candidate).clone();
        let dir = root.join(format!("tool{index:04}"));
        let job_policy = ExecutionPolicy {
            scratch_dir: dir.clone(),
            ..policy.clone()
        };
        let command = command.clone();
        let pattern = pattern.clone();
        let verifier_id = spec.id.clone();
        let keep_scratch = policy.keep_scratch;
        thunks.push(Box::new(move || {
            let outcome = run_tool_once(&candidate, &dir, &command, &job_policy, pattern.as_ref(), &verifier_id);
            if !keep_scratch {
                let _ = fs::remove_dir_all(&dir);
            }
            outcome
        }));
    }

    let (outcomes, wall_clock) = run_thunk_pool(thunks, policy.worker_count);
    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(verdict) => verdicts.push(verdict),
            Err(failure) => failures.push(failure),
        }
    }
    Ok(VerifierRun {
        verdicts,
        wall_clock,
        failures,
    })
}

fn run_tool_once(
    candidate: &Candidate,
    dir: &std::path::Path,
    command: &[String],
    policy: &ExecutionPolicy,
    lint_pattern: Option<&Regex>,
    verifier_id: &str,
) -> std::result::Result<VerdictRecord, VerifierFailure> {
    let fail = |message: String| VerifierFailure {
        candidate_id: candidate.id.clone(),
        message,
    };
    let source = materialize_candidate(candidate, dir).map_err(|e| fail(e.to_string()))?;
    let expanded = expand_command(command, &source);
    let result = execute(&expanded, b"", policy).map_err(|e| fail(e.to_string()))?;
    if result.timed_out {
        return Err(fail(format!(
            "`{verifier_id}` timed out after {:?}",
            policy.timeout
        )));
    }
    let score = match lint_pattern {
        // syntax: the parse bit
        None => {
            if result.exit.success() {
                1.0
            } else {
                0.0
            }
        }
        // lint: minus the diagnostic count; a nonzero exit with no
        // diagnostics means the tool itself broke
        Some(pattern) => {
            let count = count_diagnostics(&result.stdout, &result.stderr, pattern);
            if count == 0 && !result.exit.success() {
                return Err(fail(format!(
                    "linter exited with {:?} and produced no diagnostics",
                    result.exit
                )));
            }
            -(count as f64)
        }
    };
    Ok(VerdictRecord {
        candidate_id: candidate.id.clone(),
        verifier_id: verifier_id.to_string(),
        score,
        tests_passed: 0,
        tests_run: 0,
        timed_out: false,
        is_correct: None,
        wall_time: result.duration.as_secs_f64(),
    })
}

fn count_diagnostics(stdout: &[u8], stderr: &[u8], pattern: &Regex) -> usize {
    let mut count = 0;
    for stream in [stdout, stderr] {
        for line in String::from_utf8_lossy(stream).lines() {
            if pattern.is_match(line) {
                count += 1;
            }
        }
    }
    count
}

fn run_test_verifier(
    spec: &VerifierSpec,
    problems: &[Problem],
    pools: &BTreeMap<String, Vec<Candidate>>,
    policy: &ExecutionPolicy,
    fail_fast: bool,
) -> Result<VerifierRun> {
    let mut jobs = Vec::new();
    let mut totals = Vec::new();
    for problem in problems {
        let pool = pools.get(&problem.id).map(Vec::as_slice).unwrap_or(&[]);
        let tests = match spec.kind {
            VerifierKind::SubsetTests => {
                let n = spec.n_tests.expect("validated").min(problem.tests.len());
                problem.tests[..n].to_vec()
            }
            _ => problem.tests.clone(),
        };
        let timeout = match spec.kind {
            VerifierKind::SubsetTests => spec.low_timeout_duration(),
            _ => policy.timeout,
        };
        for candidate in pool {
            jobs.push(TestJob {
                job_id: candidate.id.clone(),
                candidate: candidate.clone(),
                entry_command: problem.entry_command.clone(),
                tests: tests.clone(),
                timeout,
                fail_fast,
            });
            totals.push(problem.tests.len());
        }
    }

    let pool_policy = ExecutionPolicy {
        scratch_dir: policy.scratch_dir.join(&spec.id),
        ..policy.clone()
    };
    let (outcomes, wall_clock) = run_pool(&jobs, &pool_policy)?;

    let mut verdicts = Vec::new();
    let mut failures = Vec::new();
    for (outcome, total_tests) in outcomes.into_iter().zip(totals) {
        match outcome.verdicts {
            Ok(test_verdicts) => {
                let tests_run = test_verdicts.len();
                let tests_passed = test_verdicts.iter().filter(|v| v.passed).count();
                let timed_out = test_verdicts.iter().any(|v| v.timed_out);
                let wall_time: f64 = test_verdicts.iter().map(|v| v.duration.as_secs_f64()).sum();
                let is_correct = match spec.kind {
                    VerifierKind::FullTests => Some(tests_passed == total_tests),
                    _ => None,
                };
                verdicts.push(VerdictRecord {
                    candidate_id: outcome.job_id,
                    verifier_id: spec.id.clone(),
                    score: tests_passed as f64,
                    tests_passed,
                    tests_run,
                    timed_out,
                    is_correct,
                    wall_time,
                });
            }
            Err(message) => failures.push(VerifierFailure {
                candidate_id: outcome.job_id,
                message,
            }),
        }
    }
    Ok(VerifierRun {
        verdicts,
        wall_clock,
        failures,
    })
}

fn ordered_candidates<'a>(
    problems: &[Problem],
    pools: &'a BTreeMap<String, Vec<Candidate>>,
) -> Result<Vec<&'a Candidate>> {
    let mut out = Vec::new();
    for problem in problems {
        if let Some(pool) = pools.get(&problem.id) {
            out.extend(pool.iter());
        }
    }
    Ok(out)
}

/// Indexes verdicts by candidate id for lookup during ranking.
pub fn index_verdicts(verdicts: &[VerdictRecord]) -> HashMap<String, VerdictRecord> {
    verdicts
        .iter()
        .map(|v| (v.candidate_id.clone(), v.clone()))
        .collect()
}
