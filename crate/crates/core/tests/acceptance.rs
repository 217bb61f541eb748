//! End-to-end acceptance checks for the whole pipeline. Each test covers
//! one guarantee and prints a single PASS/FAIL line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use prunerank::analysis::{measure_pps, removed_rank_stats};
use prunerank::dataset::{export_pairs, PairExportConfig};
use prunerank::model::{deduplicate, Candidate, Problem, TestCase, TestMode, VerdictRecord};
use prunerank::ranking::{
    best_of_k, best_of_k_clamped, best_of_k_oracle, majority_vote_rank, prune_then_rank, rank,
    FallbackPolicy, PrimaryScore, PruneThenRankConfig, RankStrategy,
};
use prunerank::sandbox::{ExecutionPolicy, SOURCE_FILE_VAR};
use prunerank::scorer::{
    bt_loss_and_grad, extract_features, pairwise_accuracy, train_linear_scorer, FeaturePair,
    FeatureSignals, LinearScorer, LinearScorerParams, Scorer, TrainConfig, FEATURE_DIM,
};
use prunerank::verifiers::{check_ordering, index_verdicts, run_verifier, VerifierSpec};

fn verdict(name: &str, detail: Result<String, String>) {
    match detail {
        Ok(note) => println!("PASS  {name} ({note})"),
        Err(msg) => {
            println!("FAIL  {name}");
            panic!("{name}: {msg}");
        }
    }
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

#[test]
fn best_of_k_matches_the_exhaustive_oracle() {
    verdict("closed-form best-of-k matches the exhaustive oracle", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let start = Instant::now();
        let instances = 1500usize;
        for round in 0..instances {
            let n = rng.random_range(1..=12usize);
            let alpha: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
            let k = rng.random_range(1..=n);
            let fast = best_of_k(&alpha, k).map_err(|e| e.to_string())?;
            let slow = best_of_k_oracle(&alpha, k).map_err(|e| e.to_string())?;
            ensure!(
                (fast - slow).abs() < 1e-12,
                "round {round}: alpha {alpha:?} k {k}: {fast} vs oracle {slow}"
            );
        }
        let elapsed = start.elapsed();
        ensure!(
            elapsed < Duration::from_secs(10),
            "{instances} comparisons took {elapsed:?}, budget is 10s"
        );
        Ok(format!("{instances} random pools in {elapsed:?}"))
    })());
}

#[test]
fn best_of_k_is_stable_at_large_pool_sizes() {
    verdict("best-of-k is stable on 128-candidate pools", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for round in 0..100 {
            let alpha: Vec<u8> = (0..128).map(|_| rng.random_range(0..=1u8)).collect();
            let mid = best_of_k(&alpha, 64).map_err(|e| e.to_string())?;
            ensure!(mid.is_finite(), "round {round}: non-finite value at k=64");
            ensure!((0.0..=1.0).contains(&mid), "round {round}: {mid} out of range");
            let mean = alpha.iter().map(|&a| a as f64).sum::<f64>() / 128.0;
            let bof1 = best_of_k(&alpha, 1).map_err(|e| e.to_string())?;
            ensure!(
                (bof1 - mean).abs() <= 1e-15,
                "round {round}: best-of-1 {bof1} vs mean {mean}"
            );
            let top = best_of_k(&alpha, 128).map_err(|e| e.to_string())?;
            ensure!(
                top == alpha[0] as f64,
                "round {round}: best-of-n {top} vs alpha[0] {}",
                alpha[0]
            );
        }
        Ok("100 random pools, n=128, k in {1, 64, 128}".to_string())
    })());
}

const PY_ENTRY: [&str; 2] = ["python3", SOURCE_FILE_VAR];

fn py_syntax_command() -> Vec<String> {
    vec![
        "python3".into(),
        "-c".into(),
        "import ast,sys; ast.parse(open(sys.argv[1]).read())".into(),
        SOURCE_FILE_VAR.into(),
    ]
}

fn py_lint_command() -> Vec<String> {
    vec![
        "python3".into(),
        concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tinylint.py").into(),
        SOURCE_FILE_VAR.into(),
    ]
}

fn stdio_test(index: usize, input: &str, expected: &str) -> TestCase {
    TestCase {
        index,
        input: input.to_string(),
        expected_output: expected.to_string(),
        mode: TestMode::StdioCompare,
    }
}

fn exit_test(index: usize, input: &str) -> TestCase {
    TestCase {
        index,
        input: input.to_string(),
        expected_output: String::new(),
        mode: TestMode::ExitCode,
    }
}

const SQ_CORRECT: &str = include_str!("fixtures/square_correct.py");
const SQ_PERIODIC: &str = include_str!("fixtures/square_periodic.py");
const SQ_DIRTY: &str = include_str!("fixtures/lint_dirty.py");

const SQ_V2: &str = "import sys\n\n\ndef half_doubled(s):\n    return len(s) % 2 == 0 and s == s[:len(s) // 2] * 2\n\n\ndata = sys.stdin.read().split()\nt = int(data[0])\nfor s in data[1:t + 1]:\n    print(\"YES\" if half_doubled(s) else \"NO\")\n";

const SQ_V3: &str = "def answer(word):\n    size = len(word)\n    if size % 2 != 0:\n        return \"NO\"\n    left = word[:size // 2]\n    right = word[size // 2:]\n    if left == right:\n        return \"YES\"\n    return \"NO\"\n\n\ncount = int(input())\nanswers = []\nfor _ in range(count):\n    answers.append(answer(input()))\nprint(\"\\n\".join(answers))\n";

const SQ_TRAIL: &str = "t = int(input())\nfor _ in range(t):\n    s = input()\n    half = len(s) // 2\n    ok = len(s) % 2 == 0 and s[:half] == s[half:]\n    print((\"YES\" if ok else \"NO\") + \"   \")\n";

const SQ_CONST_YES: &str = "t = int(input())\nfor _ in range(t):\n    input()\n    print(\"YES\")\n";

const SQ_CONST_NO: &str = "t = int(input())\nfor _ in range(t):\n    input()\n    print(\"NO\")\n";

const SQ_FIRSTLAST: &str = "t = int(input())\nfor _ in range(t):\n    s = input()\n    print(\"YES\" if s and s[0] == s[-1] else \"NO\")\n";

const SQ_SWAPPED: &str = "t = int(input())\nfor _ in range(t):\n    s = input()\n    half = len(s) // 2\n    ok = len(s) % 2 == 0 and s[:half] == s[half:]\n    print(\"NO\" if ok else \"YES\")\n";

const SQ_FIRST_ONLY: &str = "t = int(input())\ns = input()\nhalf = len(s) // 2\nif len(s) % 2 == 0 and s[:half] == s[half:]:\n    print(\"YES\")\nelse:\n    print(\"NO\")\n";

const SQ_LOWER: &str = "t = int(input())\nfor _ in range(t):\n    s = input()\n    half = len(s) // 2\n    ok = len(s) % 2 == 0 and s[:half] == s[half:]\n    print(\"yes\" if ok else \"no\")\n";

const SYNTAX_BROKEN: &str = "def broken(:\n    pass\n";

const SUM_C1: &str = "n = int(input())\ntotal = 0\nfor _ in range(n):\n    total += int(input())\nprint(total)\n";

const SUM_C2: &str = "import sys\n\nvalues = [int(v) for v in sys.stdin.read().split()]\nprint(sum(values[1:values[0] + 1]))\n";

const SUM_C3: &str = "def add_all(items):\n    total = 0\n    for item in items:\n        total = total + item\n    return total\n\n\nn = int(input())\nnumbers = [int(input()) for _ in range(n)]\nprint(add_all(numbers))\n";

const SUM_C4: &str = "n = int(input())\ntotal = 0\nwhile n > 0:\n    total += int(input())\n    n -= 1\nprint(total)\n";

const SUM_C5: &str = "import functools\nimport sys\n\nnumbers = sys.stdin.read().split()\nn = int(numbers[0])\nprint(functools.reduce(lambda a, b: a + int(b), numbers[1:n + 1], 0))\n";

const SUM_MAX: &str = "n = int(input())\nbest = None\nfor _ in range(n):\n    v = int(input())\n    if best is None or v > best:\n        best = v\nprint(best)\n";

const SUM_PLUS1: &str = "n = int(input())\nprint(sum(int(input()) for _ in range(n)) + 1)\n";

const SUM_ZERO: &str = "n = int(input())\nfor _ in range(n):\n    input()\nprint(0)\n";

const SUM_SQUARES: &str = "n = int(input())\nprint(sum(int(input()) ** 2 for _ in range(n)))\n";

const SUM_NEGATE: &str = "n = int(input())\nprint(-sum(int(input()) for _ in range(n)))\n";

const SUM_STR: &str = "n = int(input())\nparts = []\nfor _ in range(n):\n    parts.append(input().strip())\nprint(\"\".join(parts))\n";

const SUM_BROKEN: &str = "while True print('loop')\n";

const EV_C1: &str = "import sys\n\nvalue = int(input())\nsys.exit(0 if value % 2 == 0 else 1)\n";

const EV_C2: &str = "import sys\n\nsys.exit(int(input()) % 2)\n";

const EV_C3: &str = "import sys\n\n\ndef is_even(number):\n    return number % 2 == 0\n\n\nline = sys.stdin.readline()\nif is_even(int(line)):\n    sys.exit(0)\nsys.exit(3)\n";

const EV_READS: &str = "input()\n";

const EV_NOREAD: &str = "pass\n";

const EV_ALWAYS1: &str = "import sys\n\nsys.exit(1)\n";

const EV_CRASH: &str = "raise RuntimeError(\"nope\")\n";

const EV_ODD: &str = "import sys\n\nsys.exit(1 if int(input()) % 2 == 0 else 0)\n";

const EV_HALF: &str = "import sys\n\nsys.exit(0 if int(input()) % 4 == 0 else 1)\n";

/// Ten short strings and their expected judgments, plus one combined run.
const SQ_CASES: [(&str, &str); 10] = [
    ("a", "NO"),
    ("aa", "YES"),
    ("aaa", "NO"),
    ("aaaa", "YES"),
    ("abab", "YES"),
    ("abcabc", "YES"),
    ("abacaba", "NO"),
    ("xxyy", "NO"),
    ("xyyx", "NO"),
    ("xyxy", "YES"),
];

fn sq_slow_source() -> String {
    format!("import time\ntime.sleep(0.35)\n{SQ_CORRECT}")
}

struct FixtureCorpus {
    problems: Vec<Problem>,
    pools: BTreeMap<String, Vec<Candidate>>,
    raw_count: usize,
    /// Ground-truth correct sources per problem.
    correct: HashMap<&'static str, Vec<String>>,
}

/// Three problems, forty raw candidate programs: a string judgment task, a
/// summation task, and an exit-code validation task. Composition per
/// problem is fixed so downstream counts are known exactly.
fn fixture_corpus() -> FixtureCorpus {
    let entry: Vec<String> = PY_ENTRY.iter().map(|s| s.to_string()).collect();

    let mut sq_tests: Vec<TestCase> = SQ_CASES
        .iter()
        .enumerate()
        .map(|(i, (s, want))| stdio_test(i, &format!("1\n{s}\n"), &format!("{want}\n")))
        .collect();
    let combined_in = format!(
        "{}\n{}\n",
        SQ_CASES.len(),
        SQ_CASES.iter().map(|(s, _)| *s).collect::<Vec<_>>().join("\n")
    );
    let combined_out = format!(
        "{}\n",
        SQ_CASES.iter().map(|(_, w)| *w).collect::<Vec<_>>().join("\n")
    );
    sq_tests.push(stdio_test(sq_tests.len(), &combined_in, &combined_out));

    let sq_slow = sq_slow_source();
    let sq_sources: Vec<String> = [
        SQ_CORRECT,
        SQ_CORRECT,
        SQ_PERIODIC,
        SQ_PERIODIC,
        &sq_slow,
        SQ_V2,
        SQ_V3,
        SQ_TRAIL,
        SQ_CONST_YES,
        SQ_CONST_NO,
        SQ_FIRSTLAST,
        SQ_SWAPPED,
        SQ_FIRST_ONLY,
        SYNTAX_BROKEN,
        "",
        SQ_DIRTY,
        SQ_LOWER,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let sum_tests = vec![
        stdio_test(0, "1\n5\n", "5\n"),
        stdio_test(1, "3\n1\n2\n3\n", "6\n"),
        stdio_test(2, "4\n10\n20\n30\n40\n", "100\n"),
        stdio_test(3, "2\n7\n9\n", "16\n"),
        stdio_test(4, "5\n1\n1\n1\n1\n1\n", "5\n"),
    ];
    let sum_sources: Vec<String> = [
        SUM_C1, SUM_C1, SUM_C2, SUM_C3, SUM_C4, SUM_C5, SUM_MAX, SUM_PLUS1, SUM_ZERO,
        SUM_SQUARES, SUM_NEGATE, SUM_STR, SUM_BROKEN,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let ev_tests = vec![
        exit_test(0, "2\n"),
        exit_test(1, "4\n"),
        exit_test(2, "6\n"),
        exit_test(3, "8\n"),
    ];
    let ev_sources: Vec<String> = [
        EV_C1, EV_C1, EV_C2, EV_C3, EV_READS, EV_NOREAD, EV_ALWAYS1, EV_CRASH, EV_ODD, EV_HALF,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let problems = vec![
        Problem {
            id: "square-string".into(),
            statement: "Read t strings and print YES for each string that is one half written twice, NO otherwise.".into(),
            entry_command: entry.clone(),
            tests: sq_tests,
        },
        Problem {
            id: "sum-sequence".into(),
            statement: "Read n, then n integers one per line, and print their sum.".into(),
            entry_command: entry.clone(),
            tests: sum_tests,
        },
        Problem {
            id: "even-exit".into(),
            statement: "Exit with status 0 when the input integer is even.".into(),
            entry_command: entry,
            tests: ev_tests,
        },
    ];

    let raw_count = sq_sources.len() + sum_sources.len() + ev_sources.len();
    let mut pools = BTreeMap::new();
    pools.insert("square-string".to_string(), deduplicate("square-string", &sq_sources));
    pools.insert("sum-sequence".to_string(), deduplicate("sum-sequence", &sum_sources));
    pools.insert("even-exit".to_string(), deduplicate("even-exit", &ev_sources));

    let mut correct = HashMap::new();
    correct.insert(
        "square-string",
        vec![
            SQ_CORRECT.to_string(),
            sq_slow,
            SQ_V2.to_string(),
            SQ_V3.to_string(),
            SQ_TRAIL.to_string(),
        ],
    );
    correct.insert(
        "sum-sequence",
        [SUM_C1, SUM_C2, SUM_C3, SUM_C4, SUM_C5].iter().map(|s| s.to_string()).collect(),
    );
    // the exit-code suite only has even inputs, so unconditional exit-0
    // programs pass every provided test and count as correct here
    correct.insert(
        "even-exit",
        [EV_C1, EV_C2, EV_C3, EV_READS, EV_NOREAD].iter().map(|s| s.to_string()).collect(),
    );

    FixtureCorpus {
        problems,
        pools,
        raw_count,
        correct,
    }
}

fn id_of(pool: &[Candidate], source: &str) -> String {
    pool.iter()
        .find(|c| c.source == source)
        .map(|c| c.id.clone())
        .expect("fixture source is in the pool")
}

#[test]
fn verifier_chain_is_consistent_on_the_fixture_corpus() {
    verdict("weak-to-strong verifier chain holds on the fixture corpus", (|| {
        let corpus = fixture_corpus();
        ensure!(
            corpus.raw_count >= 40,
            "corpus has only {} raw candidates",
            corpus.raw_count
        );
        let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
        let policy = ExecutionPolicy::new(scratch.path());

        let cascade = vec![
            VerifierSpec::syntax("syntax", py_syntax_command()),
            VerifierSpec::lint("lint", py_lint_command()),
            VerifierSpec::subset("subset1", 1, 0.2),
            VerifierSpec::subset("subset3", 3, 0.2),
            VerifierSpec::full("full"),
        ];
        let mut by_verifier: Vec<HashMap<String, VerdictRecord>> = Vec::new();
        for spec in &cascade {
            let run = run_verifier(spec, &corpus.problems, &corpus.pools, &policy, false)
                .map_err(|e| e.to_string())?;
            ensure!(
                run.failures.is_empty(),
                "verifier `{}` had infrastructure failures: {:?}",
                spec.id,
                run.failures.iter().map(|f| &f.message).collect::<Vec<_>>()
            );
            by_verifier.push(index_verdicts(&run.verdicts));
        }

        let mut candidates_checked = 0usize;
        for pool in corpus.pools.values() {
            for candidate in pool {
                let records: Vec<VerdictRecord> = by_verifier
                    .iter()
                    .filter_map(|m| m.get(&candidate.id).cloned())
                    .collect();
                ensure!(
                    records.len() == cascade.len(),
                    "candidate `{}` is missing verdicts",
                    candidate.id
                );
                let violations = check_ordering(&records, &cascade).map_err(|e| e.to_string())?;
                ensure!(
                    violations.is_empty(),
                    "candidate `{}` violates the chain: {violations:?}",
                    candidate.id
                );
                candidates_checked += 1;
            }
        }

        // ground truth must match the designed composition exactly
        let full = &by_verifier[4];
        for (problem_id, pool) in &corpus.pools {
            let designed: HashSet<&String> =
                corpus.correct[problem_id.as_str()].iter().collect();
            for candidate in pool {
                let is_correct = full[&candidate.id].is_correct == Some(true);
                ensure!(
                    is_correct == designed.contains(&candidate.source),
                    "candidate `{}` ground truth {is_correct}, fixture says {}",
                    candidate.id,
                    !is_correct
                );
            }
        }

        // the slow program is correct, and subset verifiers keep it purely
        // through the timeout rule
        let slow_id = id_of(&corpus.pools["square-string"], &sq_slow_source());
        for subset in [&by_verifier[2], &by_verifier[3]] {
            let v = &subset[&slow_id];
            ensure!(v.timed_out, "slow candidate did not time out under the low timeout");
            ensure!(v.tests_passed == 0, "slow candidate finished a test before the timeout");
            ensure!(
                prunerank::verifiers::keep_for_pruning(prunerank::verifiers::VerifierKind::SubsetTests, v),
                "slow candidate was pruned despite timing out"
            );
        }
        ensure!(
            full[&slow_id].is_correct == Some(true),
            "slow candidate should pass the full suite"
        );

        // a subset sized to the whole suite with a full-length timeout
        // reproduces the full verifier's pass counts
        let ev_problem: Vec<Problem> = vec![corpus.problems[2].clone()];
        let mut ev_pool = BTreeMap::new();
        ev_pool.insert("even-exit".to_string(), corpus.pools["even-exit"].clone());
        let wide = VerifierSpec::subset("subset-wide", 4, 30.0);
        let wide_run = run_verifier(&wide, &ev_problem, &ev_pool, &policy, false)
            .map_err(|e| e.to_string())?;
        for v in &wide_run.verdicts {
            let full_v = &full[&v.candidate_id];
            ensure!(
                v.tests_passed == full_v.tests_passed,
                "candidate `{}`: wide subset passed {} tests, full passed {}",
                v.candidate_id,
                v.tests_passed,
                full_v.tests_passed
            );
        }

        Ok(format!(
            "{candidates_checked} candidates, {} verifiers, zero ordering violations",
            cascade.len()
        ))
    })());
}

/// Squaring task used for the quality/throughput shape check. Every
/// candidate sleeps briefly per test so suite size dominates cost, and
/// every candidate passes the first test so no pruner removes anything.
struct ShapeCorpus {
    problems: Vec<Problem>,
    pools: BTreeMap<String, Vec<Candidate>>,
}

fn shape_corpus() -> ShapeCorpus {
    let entry: Vec<String> = PY_ENTRY.iter().map(|s| s.to_string()).collect();
    let inputs = [3u32, 2, 4, 5, 6, 7, 8, 9, 10, 11, 12];
    let tests: Vec<TestCase> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| stdio_test(i, &format!("{x}\n"), &format!("{}\n", x * x)))
        .collect();

    let x1 = "import time\ntime.sleep(0.05)\nprint(9)\n".to_string();
    let x2 = "import time\ntime.sleep(0.05)\nv = input()\nprint(9)\n".to_string();
    let correct_base = "import time\ntime.sleep(0.05)\nx = int(input())\nprint(x * x)\n";
    let pads = [
        "# multiply the value by itself\n",
        "# read one integer and square it for the answer\n",
        "# squaring keeps the sign positive so no branches are needed here\n",
        "# the largest input fits comfortably in a machine integer so plain multiplication is fine\n",
        "# a dedicated fast path is pointless at this size; the interpreter startup dwarfs the multiply so keep it simple\n",
    ];
    let corrects: Vec<String> = pads.iter().map(|pad| format!("{correct_base}{pad}")).collect();

    // strictly increasing length: x1, x2, then each correct variant
    let mut raw: Vec<String> = vec![corrects[0].clone(), corrects[0].clone(), x1, corrects[1].clone()];
    raw.push(corrects[2].clone());
    raw.push(x2);
    raw.push(corrects[3].clone());
    raw.push(corrects[4].clone());

    let problems = vec![Problem {
        id: "square-number".into(),
        statement: "Read an integer and print its square.".into(),
        entry_command: entry,
        tests,
    }];
    let mut pools = BTreeMap::new();
    pools.insert("square-number".to_string(), deduplicate("square-number", &raw));
    ShapeCorpus { problems, pools }
}

fn length_scorer() -> LinearScorer {
    let mut params = LinearScorerParams::zeros();
    params.weights[0] = -1.0;
    LinearScorer::new("short-first", params).expect("params are valid")
}

#[test]
fn pruning_trades_quality_for_throughput_in_the_documented_shape() {
    verdict("strategy quality and throughput follow the expected shape", (|| {
        let corpus = shape_corpus();
        let pool = &corpus.pools["square-number"];
        let lengths: Vec<usize> = pool.iter().map(|c| c.source.chars().count()).collect();
        {
            let mut sorted = lengths.clone();
            sorted.sort_unstable();
            sorted.dedup();
            ensure!(sorted.len() == pool.len(), "candidate lengths must be distinct");
        }

        let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
        let policy = ExecutionPolicy::new(scratch.path());
        let syntax_spec = VerifierSpec::syntax("syntax", py_syntax_command());
        let subset1_spec = VerifierSpec::subset("subset1", 1, 2.0);
        let subset10_spec = VerifierSpec::subset("subset10", 10, 2.0);
        let full_spec = VerifierSpec::full("full");

        let run_one = |spec: &VerifierSpec| -> Result<HashMap<String, VerdictRecord>, String> {
            let run = run_verifier(spec, &corpus.problems, &corpus.pools, &policy, false)
                .map_err(|e| e.to_string())?;
            ensure!(run.failures.is_empty(), "verifier `{}` had failures", spec.id);
            Ok(index_verdicts(&run.verdicts))
        };
        let syntax_v = run_one(&syntax_spec)?;
        let subset1_v = run_one(&subset1_spec)?;
        let subset10_v = run_one(&subset10_spec)?;
        let full_v = run_one(&full_spec)?;

        let outcomes: HashMap<String, bool> = full_v
            .iter()
            .map(|(id, v)| (id.clone(), v.is_correct == Some(true)))
            .collect();
        let correct_count = outcomes.values().filter(|&&c| c).count();
        ensure!(correct_count == 5, "expected 5 correct candidates, found {correct_count}");

        let scorer = length_scorer();
        let scores: HashMap<String, f64> = pool
            .iter()
            .map(|c| c.id.clone())
            .zip(
                scorer
                    .score_batch(&corpus.problems[0], pool)
                    .map_err(|e| e.to_string())?,
            )
            .collect();

        let full_ranking =
            majority_vote_rank("square-number", pool, &full_v, &outcomes, "full+vote")
                .map_err(|e| e.to_string())?;
        let pruned = |verdicts: &HashMap<String, VerdictRecord>, spec: &VerifierSpec, id: &str| {
            prune_then_rank(
                "square-number",
                pool,
                verdicts,
                &scores,
                &outcomes,
                &PruneThenRankConfig {
                    strategy_id: id.to_string(),
                    prune: spec.clone(),
                    fallback: FallbackPolicy::Error,
                },
            )
            .map_err(|e| e.to_string())
        };
        let s10_ranking = pruned(&subset10_v, &subset10_spec, "subset10+linear")?;
        let s1_ranking = pruned(&subset1_v, &subset1_spec, "subset1+linear")?;
        let syn_ranking = pruned(&syntax_v, &syntax_spec, "syntax+linear")?;

        let n = full_ranking.alpha.len();
        ensure!(n == 8, "expected 8 expanded outcomes, got {n}");
        ensure!(
            s10_ranking.alpha.len() == n && s1_ranking.alpha.len() == n && syn_ranking.alpha.len() == n,
            "pruners removed candidates; the shape fixture must keep every pool equal"
        );
        for k in [1usize, n / 2] {
            let bof = |r: &prunerank::model::Ranking| best_of_k_clamped(&r.alpha, k).map_err(|e| e.to_string());
            let chain = [
                bof(&full_ranking)?,
                bof(&s10_ranking)?,
                bof(&s1_ranking)?,
                bof(&syn_ranking)?,
            ];
            for pair in chain.windows(2) {
                ensure!(
                    pair[0] >= pair[1],
                    "k={k}: quality chain broken: {chain:?}"
                );
            }
            if k > 1 {
                ensure!(
                    chain[0] > chain[3],
                    "k={k}: the full suite should strictly beat syntax+scorer, chain {chain:?}"
                );
            }
        }

        let programs = pool.len();
        let mut full_workload = || -> prunerank::Result<()> {
            let run = run_verifier(&full_spec, &corpus.problems, &corpus.pools, &policy, false)?;
            let verdicts = index_verdicts(&run.verdicts);
            majority_vote_rank("square-number", pool, &verdicts, &outcomes, "full+vote")?;
            Ok(())
        };
        let full_pps = measure_pps(&mut full_workload, programs, 5).map_err(|e| e.to_string())?;
        let mut pruned_workload = || -> prunerank::Result<()> {
            let run = run_verifier(&subset1_spec, &corpus.problems, &corpus.pools, &policy, false)?;
            let verdicts = index_verdicts(&run.verdicts);
            let scores: HashMap<String, f64> = pool
                .iter()
                .map(|c| c.id.clone())
                .zip(scorer.score_batch(&corpus.problems[0], pool)?)
                .collect();
            prune_then_rank(
                "square-number",
                pool,
                &verdicts,
                &scores,
                &outcomes,
                &PruneThenRankConfig {
                    strategy_id: "subset1+linear".into(),
                    prune: subset1_spec.clone(),
                    fallback: FallbackPolicy::Error,
                },
            )?;
            Ok(())
        };
        let pruned_pps = measure_pps(&mut pruned_workload, programs, 5).map_err(|e| e.to_string())?;
        ensure!(
            full_pps.pps < pruned_pps.pps,
            "full suite measured {:.2} programs/s, subset1+scorer {:.2}; pruning should be faster",
            full_pps.pps,
            pruned_pps.pps
        );

        Ok(format!(
            "quality chain holds at k in {{1, {}}}; throughput {:.1} vs {:.1} programs/s over 5 runs",
            n / 2,
            pruned_pps.pps,
            full_pps.pps
        ))
    })());
}

#[test]
fn preference_gradient_matches_finite_differences() {
    verdict("preference-loss gradient matches finite differences", (|| {
        let mut worst: f64 = 0.0;
        for draw in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
            let mut params = LinearScorerParams::zeros();
            for w in params.weights.iter_mut() {
                *w = rng.random_range(-1.0..1.0);
            }
            let pairs: Vec<FeaturePair> = (0..4)
                .map(|_| {
                    let mut winner = [0.0; FEATURE_DIM];
                    let mut loser = [0.0; FEATURE_DIM];
                    for j in 0..FEATURE_DIM {
                        winner[j] = rng.random_range(-1.0..1.0);
                        loser[j] = rng.random_range(-1.0..1.0);
                    }
                    FeaturePair {
                        winner: prunerank::scorer::FeatureVector {
                            values: winner,
                            schema_id: params.schema_id.clone(),
                        },
                        loser: prunerank::scorer::FeatureVector {
                            values: loser,
                            schema_id: params.schema_id.clone(),
                        },
                    }
                })
                .collect();
            let (_, grad) = bt_loss_and_grad(&params, &pairs).map_err(|e| e.to_string())?;
            let h = 1e-4;
            let mut numeric = [0.0; FEATURE_DIM];
            for (j, slot) in numeric.iter_mut().enumerate() {
                let mut up = params.clone();
                up.weights[j] += h;
                let mut down = params.clone();
                down.weights[j] -= h;
                *slot = (bt_loss_and_grad(&up, &pairs).map_err(|e| e.to_string())?.0
                    - bt_loss_and_grad(&down, &pairs).map_err(|e| e.to_string())?.0)
                    / (2.0 * h);
            }
            let diff_norm = numeric
                .iter()
                .zip(grad.weights.iter())
                .map(|(n, a)| (n - a) * (n - a))
                .sum::<f64>()
                .sqrt();
            let grad_norm = grad.weights.iter().map(|a| a * a).sum::<f64>().sqrt();
            ensure!(grad_norm > 0.0, "draw {draw}: zero gradient, fixture degenerate");
            let rel = diff_norm / grad_norm;
            worst = worst.max(rel);
            ensure!(
                rel < 1e-5,
                "draw {draw}: relative gradient error {rel:.3e} exceeds 1e-5"
            );
        }
        Ok(format!("100 random draws, worst relative error {worst:.3e}"))
    })());
}

#[test]
fn trained_scorer_separates_a_separable_corpus() {
    verdict("trainable scorer reaches perfect pairwise accuracy", (|| {
        let problem = Problem {
            id: "train".into(),
            statement: "anything".into(),
            entry_command: vec!["python3".into()],
            tests: vec![],
        };
        let features = |source: &str| {
            let candidate = Candidate {
                id: "t".into(),
                problem_id: "train".into(),
                source: source.into(),
                dup_count: 1,
            };
            extract_features(&problem, &candidate, FeatureSignals::default())
        };
        // winners are consistently shorter than losers
        let pairs: Vec<FeaturePair> = (0..12)
            .map(|i| FeaturePair {
                winner: features(&format!("print({i})\n")),
                loser: features(&format!(
                    "value = {i}\n# laboriously spelled out version number {i}\nprint(value)\n"
                )),
            })
            .collect();
        let config = TrainConfig {
            epochs: 500,
            learning_rate: 5.0,
            seed: 9,
        };
        let outcome = train_linear_scorer(&pairs, &config).map_err(|e| e.to_string())?;
        ensure!(
            outcome.final_loss < outcome.initial_loss,
            "loss did not improve: {} -> {}",
            outcome.initial_loss,
            outcome.final_loss
        );
        let accuracy = pairwise_accuracy(&outcome.params, &pairs).map_err(|e| e.to_string())?;
        ensure!(accuracy == 1.0, "pairwise accuracy {accuracy} after 500 epochs");
        let again = train_linear_scorer(&pairs, &config).map_err(|e| e.to_string())?;
        ensure!(outcome.params == again.params, "training is not seed-deterministic");
        Ok(format!(
            "accuracy 1.0 within {} epochs, loss {:.4} -> {:.4}, deterministic",
            config.epochs, outcome.initial_loss, outcome.final_loss
        ))
    })());
}

#[test]
fn pruning_rescues_an_adversarially_misranked_pool() {
    verdict("pruning removes a top-scored wrong answer and lifts quality", (|| {
        let pool: Vec<Candidate> = (1..=6)
            .map(|i| Candidate {
                id: format!("c{i}"),
                problem_id: "adv".into(),
                source: format!("src{i}"),
                dup_count: 1,
            })
            .collect();
        // the scorer adores c1, which fails the first test; c2..c6 are correct
        let scores: HashMap<String, f64> =
            [("c1", 10.0), ("c2", 5.0), ("c3", 4.0), ("c4", 3.0), ("c5", 2.0), ("c6", 1.0)]
                .iter()
                .map(|(id, s)| (id.to_string(), *s))
                .collect();
        let outcomes: HashMap<String, bool> =
            pool.iter().map(|c| (c.id.clone(), c.id != "c1")).collect();
        let subset1 = VerifierSpec::subset("subset1", 1, 2.0);
        let verdicts: HashMap<String, VerdictRecord> = pool
            .iter()
            .map(|c| {
                let passed = usize::from(c.id != "c1");
                (
                    c.id.clone(),
                    VerdictRecord {
                        candidate_id: c.id.clone(),
                        verifier_id: "subset1".into(),
                        score: passed as f64,
                        tests_passed: passed,
                        tests_run: 1,
                        timed_out: false,
                        is_correct: None,
                        wall_time: 0.01,
                    },
                )
            })
            .collect();

        let strategy = RankStrategy::new("none+linear", PrimaryScore::Scorer);
        let scorer_only =
            rank("adv", &pool, &scores, &outcomes, &strategy).map_err(|e| e.to_string())?;
        ensure!(scorer_only.ordered[0] == "c1", "fixture must rank the wrong answer first");
        let pruned = prune_then_rank(
            "adv",
            &pool,
            &verdicts,
            &scores,
            &outcomes,
            &PruneThenRankConfig {
                strategy_id: "subset1+linear".into(),
                prune: subset1,
                fallback: FallbackPolicy::Error,
            },
        )
        .map_err(|e| e.to_string())?;

        let k = 3;
        let before = best_of_k_clamped(&scorer_only.alpha, k).map_err(|e| e.to_string())?;
        let after = best_of_k_clamped(&pruned.alpha, k).map_err(|e| e.to_string())?;
        ensure!(
            after > before,
            "pruning did not improve quality: {before} -> {after}"
        );

        let removed: HashSet<String> = ["c1".to_string()].into_iter().collect();
        let diag = removed_rank_stats(&scorer_only.ordered, &removed).map_err(|e| e.to_string())?;
        ensure!(
            diag.m1_rank == Some(1.0),
            "removed candidate should sit at rank 1, diagnostics say {:?}",
            diag.m1_rank
        );
        Ok(format!("best-of-{k} rose from {before} to {after}; removed candidate held rank 1"))
    })());
}

#[test]
fn removing_incorrect_candidates_never_lowers_the_oracle_metric() {
    verdict("dropping a wrong candidate never hurts the oracle metric", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut checked = 0usize;
        while checked < 1000 {
            let n = rng.random_range(2..=12usize);
            let mut alpha: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1u8)).collect();
            if !alpha.contains(&0) {
                alpha[rng.random_range(0..n)] = 0;
            }
            // pruning targets the best-ranked wrong answer; removing a
            // bottom-ranked one can legitimately lower the metric
            let drop_at = alpha.iter().position(|&a| a == 0).unwrap();
            let k = rng.random_range(1..=n);
            let k_eff = k.min(n - 1);
            let before = best_of_k_oracle(&alpha, k_eff).map_err(|e| e.to_string())?;
            let mut reduced = alpha.clone();
            reduced.remove(drop_at);
            let after = best_of_k_oracle(&reduced, k_eff).map_err(|e| e.to_string())?;
            ensure!(
                after + 1e-12 >= before,
                "alpha {alpha:?} k {k_eff}: removing position {drop_at} dropped {before} to {after}"
            );
            checked += 1;
        }
        Ok("1000 random oracle-checked removals".to_string())
    })());
}

#[test]
fn throughput_meter_tracks_analytic_sleep_workloads() {
    verdict("throughput meter matches analytic sleep workloads", (|| {
        let programs = 24usize;
        let mut short = || -> prunerank::Result<()> {
            std::thread::sleep(Duration::from_millis(120));
            Ok(())
        };
        let short_report = measure_pps(&mut short, programs, 5).map_err(|e| e.to_string())?;
        let short_expected = programs as f64 / 0.120;
        ensure!(
            (short_report.pps - short_expected).abs() / short_expected < 0.10,
            "short workload measured {:.2}, analytic {:.2}",
            short_report.pps,
            short_expected
        );

        let mut long = || -> prunerank::Result<()> {
            std::thread::sleep(Duration::from_millis(240));
            Ok(())
        };
        let long_report = measure_pps(&mut long, programs, 5).map_err(|e| e.to_string())?;
        let long_expected = programs as f64 / 0.240;
        ensure!(
            (long_report.pps - long_expected).abs() / long_expected < 0.10,
            "long workload measured {:.2}, analytic {:.2}",
            long_report.pps,
            long_expected
        );

        let ratio = short_report.pps / long_report.pps;
        ensure!(
            (1.7..=2.3).contains(&ratio),
            "doubling per-program cost should halve throughput, ratio {ratio:.3}"
        );
        Ok(format!(
            "measured {:.1} and {:.1} programs/s against analytic {:.1} and {:.1}",
            short_report.pps, long_report.pps, short_expected, long_expected
        ))
    })());
}

#[test]
fn exported_pairs_honor_filters_caps_and_seed() {
    verdict("exported preference pairs honor filters, caps, and the seed", (|| {
        let corpus = fixture_corpus();
        let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
        let policy = ExecutionPolicy::new(scratch.path());

        let syntax_spec = VerifierSpec::syntax("syntax", py_syntax_command());
        let full_spec = VerifierSpec::full("full");
        let syntax_run = run_verifier(&syntax_spec, &corpus.problems, &corpus.pools, &policy, false)
            .map_err(|e| e.to_string())?;
        let full_run = run_verifier(&full_spec, &corpus.problems, &corpus.pools, &policy, false)
            .map_err(|e| e.to_string())?;
        let syntax_v = index_verdicts(&syntax_run.verdicts);
        let full_v = index_verdicts(&full_run.verdicts);

        let pools: HashMap<String, Vec<Candidate>> = corpus
            .pools
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let config = PairExportConfig { seed: 17, ..Default::default() };
        let pairs = export_pairs(&corpus.problems, &pools, &full_v, &syntax_v, &config)
            .map_err(|e| e.to_string())?;
        let again = export_pairs(&corpus.problems, &pools, &full_v, &syntax_v, &config)
            .map_err(|e| e.to_string())?;
        ensure!(pairs == again, "same seed must export identical pairs");

        let mut per_problem: HashMap<&str, usize> = HashMap::new();
        let mut winners: HashMap<&str, HashSet<&str>> = HashMap::new();
        let mut losers: HashMap<&str, HashSet<&str>> = HashMap::new();
        for pair in &pairs {
            let problem_id = pair.problem_id.as_str();
            *per_problem.entry(problem_id).or_default() += 1;
            winners.entry(problem_id).or_default().insert(&pair.winner_source);
            losers.entry(problem_id).or_default().insert(&pair.loser_source);

            let pool = &corpus.pools[problem_id];
            for (source, want_correct) in
                [(&pair.winner_source, true), (&pair.loser_source, false)]
            {
                let id = id_of(pool, source);
                ensure!(
                    syntax_v[&id].score >= 1.0,
                    "exported candidate `{id}` fails the syntax check"
                );
                ensure!(
                    full_v[&id].is_correct == Some(want_correct),
                    "candidate `{id}` exported on the wrong side"
                );
            }
        }
        for (problem_id, count) in &per_problem {
            ensure!(
                *count <= config.max_per_side * config.max_per_side,
                "problem `{problem_id}` exported {count} pairs"
            );
            ensure!(
                winners[problem_id].len() <= config.max_per_side
                    && losers[problem_id].len() <= config.max_per_side,
                "problem `{problem_id}` exceeded the per-side cap"
            );
        }
        // composition is designed: 5x6, 5x6, and 5x4 eligible candidates
        ensure!(per_problem["square-string"] == 30, "square-string: {:?}", per_problem);
        ensure!(per_problem["sum-sequence"] == 30, "sum-sequence: {:?}", per_problem);
        ensure!(per_problem["even-exit"] == 20, "even-exit: {:?}", per_problem);

        Ok(format!(
            "{} pairs across {} problems, caps held, seed-stable",
            pairs.len(),
            per_problem.len()
        ))
    })());
}
