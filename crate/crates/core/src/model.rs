//! Domain types and corpus ingestion.
//!
//! A corpus is two JSONL files: one problem per line, one candidate program
//! per line. Candidates are grouped per problem in file order, then
//! deduplicated into [`Candidate`] pools that carry duplicate counts. Every
//! downstream stage (verification, ranking, training) works on those pools.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a single test case judges a program run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMode {
    /// Pass iff normalized stdout equals the normalized expected output.
    StdioCompare,
    /// Pass iff the process exits with status 0. `expected_output` must be empty.
    ExitCode,
}

/// One test case of a problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    /// Position within the parent problem's test list. Not serialized;
    /// assigned at load time.
    #[serde(skip)]
    pub index: usize,
    pub input: String,
    pub expected_output: String,
    pub mode: TestMode,
}

/// A problem statement plus its test suite and the command used to run a
/// candidate against it. `entry_command` is an argv template; the literal
/// `{source_file}` is replaced with the materialized candidate path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub entry_command: Vec<String>,
    pub tests: Vec<TestCase>,
}

impl Problem {
    pub fn test_count(&self) -> usize {
        self.tests.len()
    }
}

/// Wire form of a candidate line in the candidates JSONL file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawCandidate {
    pub problem_id: String,
    pub source: String,
}

/// A deduplicated candidate program. `dup_count` is the number of raw
/// candidates that collapsed into this one; it is always at least 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub problem_id: String,
    pub source: String,
    pub dup_count: usize,
}

/// Outcome of running one verifier over one candidate.
///
/// `score` is the verifier's ranking signal: 1/0 for syntax, minus the
/// diagnostic count for lint, tests passed for subset and full runs.
/// `is_correct` is only ever set by the full verifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub candidate_id: String,
    pub verifier_id: String,
    pub score: f64,
    pub tests_passed: usize,
    pub tests_run: usize,
    pub timed_out: bool,
    pub is_correct: Option<bool>,
    /// Seconds spent executing this candidate's runs for this verifier.
    pub wall_time: f64,
}

impl VerdictRecord {
    /// Checks internal consistency; used when loading verdicts from disk.
    pub fn validate(&self) -> Result<()> {
        if self.tests_passed > self.tests_run {
            return Err(Error::Config(format!(
                "verdict for `{}` from `{}` has tests_passed {} > tests_run {}",
                self.candidate_id, self.verifier_id, self.tests_passed, self.tests_run
            )));
        }
        if !self.score.is_finite() || !self.wall_time.is_finite() {
            return Err(Error::NonFinite(format!(
                "verdict for `{}` from `{}`",
                self.candidate_id, self.verifier_id
            )));
        }
        Ok(())
    }
}

/// An ordered pool for one problem under one strategy, with the expanded
/// outcome vector used by selection metrics. `alpha` repeats each ordered
/// candidate's outcome bit `dup_count` times, so `alpha.len()` equals the
/// pool size before deduplication.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranking {
    pub problem_id: String,
    pub strategy_id: String,
    pub ordered: Vec<String>,
    pub alpha: Vec<u8>,
    pub fallback_used: bool,
}

/// A winner/loser pair exported for preference training, plus the rendered
/// prompt context. The prompt keeps a literal `{solution}` placeholder so a
/// consumer can substitute either side's source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub problem_id: String,
    pub winner_source: String,
    pub loser_source: String,
    pub prompt: String,
}

/// A loaded corpus: problems in file order and raw candidate sources grouped
/// per problem in file order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub problems: Vec<Problem>,
    sources: BTreeMap<String, Vec<String>>,
}

impl Corpus {
    /// Assembles a corpus in memory. Every sources key must name a problem.
    pub fn new(problems: Vec<Problem>, sources: BTreeMap<String, Vec<String>>) -> Result<Self> {
        for key in sources.keys() {
            if !problems.iter().any(|p| &p.id == key) {
                return Err(Error::Config(format!(
                    "candidate pool references unknown problem `{key}`"
                )));
            }
        }
        Ok(Corpus { problems, sources })
    }

    pub fn problem(&self, id: &str) -> Option<&Problem> {
        self.problems.iter().find(|p| p.id == id)
    }

    /// Raw candidate sources for a problem, in candidates-file order.
    pub fn raw_sources(&self, problem_id: &str) -> &[String] {
        self.sources
            .get(problem_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Deduplicates every problem's candidates. Problems with no candidates
    /// get an empty pool.
    pub fn pools(&self) -> BTreeMap<String, Vec<Candidate>> {
        self.problems
            .iter()
            .map(|p| (p.id.clone(), deduplicate(&p.id, self.raw_sources(&p.id))))
            .collect()
    }

    /// Writes the corpus back out in the same JSONL wire format it was read
    /// from. Loading and saving is lossless.
    pub fn save(&self, problems_path: &Path, candidates_path: &Path) -> Result<()> {
        write_jsonl(problems_path, &self.problems)?;
        let mut raw = Vec::new();
        for problem in &self.problems {
            for source in self.raw_sources(&problem.id) {
                raw.push(RawCandidate {
                    problem_id: problem.id.clone(),
                    source: source.clone(),
                });
            }
        }
        write_jsonl(candidates_path, &raw)
    }
}

/// Loads and validates a corpus from problem and candidate JSONL files.
///
/// Fails with a line-numbered error on malformed JSON, duplicate or empty
/// problem ids, empty test suites, and candidates that reference a problem
/// id not present in the problems file.
pub fn load_corpus(problems_path: &Path, candidates_path: &Path) -> Result<Corpus> {
    let problems: Vec<Problem> = read_jsonl(problems_path)?;
    let mut seen = HashSet::new();
    let mut validated = Vec::with_capacity(problems.len());
    for (line_ix, mut problem) in problems.into_iter().enumerate() {
        let line = line_ix + 1;
        let fail = |message: String| Error::Parse {
            path: problems_path.display().to_string(),
            line,
            message,
        };
        if problem.id.is_empty() {
            return Err(fail("problem id is empty".into()));
        }
        if !seen.insert(problem.id.clone()) {
            return Err(fail(format!("duplicate problem id `{}`", problem.id)));
        }
        if problem.entry_command.is_empty() {
            return Err(fail(format!("problem `{}` has empty entry_command", problem.id)));
        }
        if problem.tests.is_empty() {
            return Err(fail(format!("problem `{}` has no tests", problem.id)));
        }
        for (index, test) in problem.tests.iter_mut().enumerate() {
            test.index = index;
            if test.mode == TestMode::ExitCode && !test.expected_output.is_empty() {
                return Err(fail(format!(
                    "problem `{}` test {} is exit-code mode but has expected_output",
                    problem.id, index
                )));
            }
        }
        validated.push(problem);
    }

    let raw: Vec<RawCandidate> = read_jsonl(candidates_path)?;
    let mut sources: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (line_ix, candidate) in raw.into_iter().enumerate() {
        if !seen.contains(&candidate.problem_id) {
            return Err(Error::UnknownProblem {
                path: candidates_path.display().to_string(),
                line: line_ix + 1,
                problem_id: candidate.problem_id,
            });
        }
        sources
            .entry(candidate.problem_id)
            .or_default()
            .push(candidate.source);
    }

    Ok(Corpus {
        problems: validated,
        sources,
    })
}

/// Collapses identical sources into one [`Candidate`] each, counting
/// duplicates. Equality is exact after normalizing CRLF line endings to LF;
/// no other whitespace normalization is applied. The surviving candidate
/// keeps the first occurrence's position, and ids are assigned as
/// `<problem_id>#<first-occurrence-index>` so they are deterministic
/// functions of file order.
pub fn deduplicate(problem_id: &str, sources: &[String]) -> Vec<Candidate> {
    let mut by_source: HashMap<String, usize> = HashMap::new();
    let mut pool: Vec<Candidate> = Vec::new();
    for raw in sources {
        let normalized = raw.replace("\r\n", "\n");
        match by_source.get(&normalized) {
            Some(&at) => pool[at].dup_count += 1,
            None => {
                by_source.insert(normalized.clone(), pool.len());
                pool.push(Candidate {
                    id: format!("{problem_id}#{}", pool.len()),
                    problem_id: problem_id.to_string(),
                    source: normalized,
                    dup_count: 1,
                });
            }
        }
    }
    pool
}

/// Expands ranked (candidate, outcome) pairs into the flat outcome vector
/// used by selection metrics: each candidate contributes `dup_count`
/// contiguous copies of its outcome bit, in rank order.
pub fn expand_alpha(ranked: &[(&Candidate, bool)]) -> Vec<u8> {
    let mut alpha = Vec::with_capacity(ranked.iter().map(|(c, _)| c.dup_count).sum());
    for (candidate, correct) in ranked {
        alpha.extend(std::iter::repeat_n(u8::from(*correct), candidate.dup_count));
    }
    alpha
}

/// Reads a JSONL file into typed records. Blank lines are skipped; parse
/// failures report the 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut items = Vec::new();
    for (line_ix, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: line_ix + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes records as one JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}
