//! Sandboxed subprocess execution and the bounded worker pool.
//!
//! Every program run goes through [`execute`]: the child is placed in its
//! own process group, fed stdin from memory, drained by capped reader
//! threads, and killed (whole group) if it outlives the timeout. Higher
//! layers build on that: [`run_test`] judges one candidate run against one
//! test case, and [`run_pool`] fans a list of candidate-versus-tests jobs
//! across a fixed number of workers while preserving job order in the
//! results.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::{Candidate, Problem, TestCase, TestMode};

/// Name given to a candidate's materialized source inside its scratch dir.
pub const SOURCE_FILE_NAME: &str = "candidate.py";

/// Placeholder replaced with the materialized source path when expanding an
/// entry command template.
pub const SOURCE_FILE_VAR: &str = "{source_file}";

/// Resource limits and placement for subprocess runs.
///
/// `scratch_dir` is the working directory for [`execute`] and the parent
/// under which [`run_pool`] creates one subdirectory per job. Concurrent
/// pools must not share a scratch dir.
#[derive(Debug, Clone)]
pub struct ExecutionPolicy {
    pub timeout: Duration,
    pub max_output_bytes: usize,
    pub worker_count: usize,
    pub scratch_dir: PathBuf,
    pub keep_scratch: bool,
}

impl ExecutionPolicy {
    pub fn new(scratch_dir: impl Into<PathBuf>) -> Self {
        ExecutionPolicy {
            timeout: Duration::from_secs(30),
            max_output_bytes: 1 << 20,
            worker_count: thread::available_parallelism().map(usize::from).unwrap_or(4),
            scratch_dir: scratch_dir.into(),
            keep_scratch: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::Config("execution timeout must be positive".into()));
        }
        if self.worker_count == 0 {
            return Err(Error::Config("worker count must be at least 1".into()));
        }
        if self.max_output_bytes == 0 {
            return Err(Error::Config("output cap must be at least 1 byte".into()));
        }
        Ok(())
    }

    fn for_dir(&self, dir: PathBuf) -> ExecutionPolicy {
        ExecutionPolicy {
            scratch_dir: dir,
            ..self.clone()
        }
    }
}

/// How a process ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessExit {
    Code(i32),
    Signal(i32),
}

impl ProcessExit {
    pub fn success(&self) -> bool {
        matches!(self, ProcessExit::Code(0))
    }
}

/// Everything observed from one subprocess run.
#[derive(Debug, Clone)]
pub struct ExecutionResult {
    pub exit: ProcessExit,
    pub stdout: Vec<u8>,
    pub stderr: Vec<u8>,
    /// Spawn-to-reap wall time. At least the timeout when `timed_out`.
    pub duration: Duration,
    pub timed_out: bool,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
}

struct CappedRead {
    bytes: Vec<u8>,
    truncated: bool,
}

/// Reads to EOF, keeping at most `cap` bytes. The stream is always fully
/// drained so a chatty child cannot block on a full pipe.
fn read_capped<R: Read>(mut reader: R, cap: usize) -> CappedRead {
    let mut bytes = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 8192];
    loop {
        match reader.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                if bytes.len() < cap {
                    let take = n.min(cap - bytes.len());
                    bytes.extend_from_slice(&buf[..take]);
                    if take < n {
                        truncated = true;
                    }
                } else {
                    truncated = true;
                }
            }
            Err(_) => break,
        }
    }
    CappedRead { bytes, truncated }
}

#[cfg(unix)]
fn kill_process_group(pid: u32) {
    // the child was made its own group leader, so its pid is the pgid
    unsafe {
        libc::killpg(pid as i32, libc::SIGKILL);
    }
}

#[cfg(not(unix))]
fn kill_process_group(_pid: u32) {}

/// Runs one command to completion under the policy's limits.
///
/// The child runs in `policy.scratch_dir` as its own process group leader;
/// on timeout the whole group is killed, so helper processes the candidate
/// spawned die with it. Output streams are captured up to
/// `max_output_bytes` each. A spawn failure (missing binary, bad
/// permissions) is an error, not a result: nothing ran.
pub fn execute(
    command: &[String],
    stdin_bytes: &[u8],
    policy: &ExecutionPolicy,
) -> Result<ExecutionResult> {
    policy.validate()?;
    if command.is_empty() {
        return Err(Error::Config("empty command".into()));
    }
    fs::create_dir_all(&policy.scratch_dir)?;

    let mut cmd = Command::new(&command[0]);
    cmd.args(&command[1..])
        .current_dir(&policy.scratch_dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    #[cfg(unix)]
    {
        use std::os::unix::process::CommandExt;
        cmd.process_group(0);
    }

    let start = Instant::now();
    let mut child = cmd.spawn().map_err(|source| Error::Spawn {
        command: command[0].clone(),
        source,
    })?;
    let pid = child.id();

    let stdin_pipe = child.stdin.take();
    let stdin_owned = stdin_bytes.to_vec();
    let stdin_writer = thread::spawn(move || {
        if let Some(mut pipe) = stdin_pipe {
            // a child that never reads stdin closes the pipe; that is fine
            let _ = pipe.write_all(&stdin_owned);
        }
    });

    let cap = policy.max_output_bytes;
    let stdout_pipe = child.stdout.take().expect("stdout piped");
    let stderr_pipe = child.stderr.take().expect("stderr piped");
    let stdout_reader = thread::spawn(move || read_capped(stdout_pipe, cap));
    let stderr_reader = thread::spawn(move || read_capped(stderr_pipe, cap));

    let deadline = start + policy.timeout;
    let mut timed_out = false;
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None => {
                if Instant::now() >= deadline {
                    timed_out = true;
                    kill_process_group(pid);
                    break child.wait()?;
                }
                thread::sleep(Duration::from_millis(1));
            }
        }
    };
    // reap any grandchildren still holding the output pipes, so the reader
    // joins below are bounded
    kill_process_group(pid);
    let duration = start.elapsed();

    let _ = stdin_writer.join();
    let stdout = stdout_reader
        .join()
        .unwrap_or(CappedRead { bytes: Vec::new(), truncated: false });
    let stderr = stderr_reader
        .join()
        .unwrap_or(CappedRead { bytes: Vec::new(), truncated: false });

    let exit = exit_of(&status);
    Ok(ExecutionResult {
        exit,
        stdout: stdout.bytes,
        stderr: stderr.bytes,
        duration,
        timed_out,
        stdout_truncated: stdout.truncated,
        stderr_truncated: stderr.truncated,
    })
}

#[cfg(unix)]
fn exit_of(status: &std::process::ExitStatus) -> ProcessExit {
    use std::os::unix::process::ExitStatusExt;
    match status.code() {
        Some(code) => ProcessExit::Code(code),
        None => ProcessExit::Signal(status.signal().unwrap_or(-1)),
    }
}

#[cfg(not(unix))]
fn exit_of(status: &std::process::ExitStatus) -> ProcessExit {
    ProcessExit::Code(status.code().unwrap_or(-1))
}

/// Writes a candidate's source into `dir` and returns the file path. The
/// path is absolutized so expanded commands resolve it from any working
/// directory; children run from their scratch dir, not the caller's cwd.
pub fn materialize_candidate(candidate: &Candidate, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(SOURCE_FILE_NAME);
    fs::write(&path, candidate.source.as_bytes())?;
    Ok(std::path::absolute(&path)?)
}

/// Expands an argv template, substituting the source-file placeholder.
pub fn expand_command(template: &[String], source_file: &Path) -> Vec<String> {
    let source = source_file.display().to_string();
    template
        .iter()
        .map(|arg| arg.replace(SOURCE_FILE_VAR, &source))
        .collect()
}

/// Canonical form used to compare program output against expectations:
/// trailing spaces, tabs and carriage returns are stripped from each line,
/// then trailing blank lines are dropped.
pub fn normalize_output(raw: &[u8]) -> Vec<u8> {
    let mut lines: Vec<&[u8]> = raw
        .split(|&b| b == b'\n')
        .map(|line| {
            let mut end = line.len();
            while end > 0 && matches!(line[end - 1], b' ' | b'\t' | b'\r') {
                end -= 1;
            }
            &line[..end]
        })
        .collect();
    while matches!(lines.last(), Some(l) if l.is_empty()) {
        lines.pop();
    }
    lines.join(&b'\n')
}

/// Result of judging one candidate run against one test case.
#[derive(Debug, Clone)]
pub struct TestVerdict {
    pub test_index: usize,
    pub passed: bool,
    pub timed_out: bool,
    pub exit: ProcessExit,
    pub duration: Duration,
}

fn judge(test: &TestCase, result: &ExecutionResult) -> bool {
    if result.timed_out {
        return false;
    }
    match test.mode {
        TestMode::StdioCompare => {
            normalize_output(&result.stdout) == normalize_output(test.expected_output.as_bytes())
        }
        TestMode::ExitCode => result.exit.success(),
    }
}

fn run_test_at(
    expanded_command: &[String],
    test: &TestCase,
    policy: &ExecutionPolicy,
) -> Result<TestVerdict> {
    let result = execute(expanded_command, test.input.as_bytes(), policy)?;
    Ok(TestVerdict {
        test_index: test.index,
        passed: judge(test, &result),
        timed_out: result.timed_out,
        exit: result.exit,
        duration: result.duration,
    })
}

static SINGLE_RUN_SEQ: AtomicUsize = AtomicUsize::new(0);

/// Materializes a candidate in a fresh scratch subdirectory, runs it on one
/// test case under the policy's timeout, and judges the output. The
/// subdirectory is removed afterwards unless the policy keeps scratch.
pub fn run_test(
    candidate: &Candidate,
    problem: &Problem,
    test: &TestCase,
    policy: &ExecutionPolicy,
) -> Result<TestVerdict> {
    policy.validate()?;
    let seq = SINGLE_RUN_SEQ.fetch_add(1, Ordering::Relaxed);
    let dir = policy.scratch_dir.join(format!("single{seq:04}"));
    let source = materialize_candidate(candidate, &dir)?;
    let command = expand_command(&problem.entry_command, &source);
    let verdict = run_test_at(&command, test, &policy.for_dir(dir.clone()));
    if !policy.keep_scratch {
        let _ = fs::remove_dir_all(&dir);
    }
    verdict
}

/// One unit of pool work: run a candidate against a list of tests.
#[derive(Debug, Clone)]
pub struct TestJob {
    pub job_id: String,
    pub candidate: Candidate,
    pub entry_command: Vec<String>,
    pub tests: Vec<TestCase>,
    pub timeout: Duration,
    /// Stop at the first test that does not pass.
    pub fail_fast: bool,
}

/// Per-job result. Infrastructure failures (the candidate could not be
/// written or spawned) are recorded here instead of aborting the pool.
#[derive(Debug)]
pub struct JobOutcome {
    pub job_id: String,
    pub verdicts: std::result::Result<Vec<TestVerdict>, String>,
}

/// A boxed unit of work for the thread pool.
pub type Thunk<T> = Box<dyn FnOnce() -> T + Send>;

/// Runs independent thunks on `workers` threads, returning results in input
/// order plus the dispatch-to-join wall time.
pub fn run_thunk_pool<T: Send>(thunks: Vec<Thunk<T>>, workers: usize) -> (Vec<T>, Duration) {
    let total = thunks.len();
    let queue: Mutex<Vec<Option<Thunk<T>>>> = Mutex::new(thunks.into_iter().map(Some).collect());
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<T>>> = Mutex::new((0..total).map(|_| None).collect());

    let start = Instant::now();
    thread::scope(|scope| {
        for _ in 0..workers.max(1).min(total.max(1)) {
            scope.spawn(|| loop {
                let index = cursor.fetch_add(1, Ordering::Relaxed);
                if index >= total {
                    break;
                }
                let thunk = queue.lock().unwrap()[index].take().expect("thunk taken once");
                let value = thunk();
                results.lock().unwrap()[index] = Some(value);
            });
        }
    });
    let wall = start.elapsed();

    let values = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("all thunks ran"))
        .collect();
    (values, wall)
}

/// Runs every job on a bounded worker pool and returns outcomes in job
/// order plus the total wall-clock time of the pool run.
///
/// Each job gets its own subdirectory under the policy scratch dir, so
/// candidates that write to their working directory cannot interfere with
/// one another. The job's own timeout overrides the policy timeout for its
/// test runs. Jobs that fail for infrastructure reasons land in their
/// outcome slot; the pool always completes.
pub fn run_pool(jobs: &[TestJob], policy: &ExecutionPolicy) -> Result<(Vec<JobOutcome>, Duration)> {
    policy.validate()?;
    fs::create_dir_all(&policy.scratch_dir)?;

    let mut thunks: Vec<Box<dyn FnOnce() -> JobOutcome + Send>> = Vec::with_capacity(jobs.len());
    for (index, job) in jobs.iter().enumerate() {
        let job = job.clone();
        let dir = policy.scratch_dir.join(format!("job{index:04}"));
        let job_policy = ExecutionPolicy {
            timeout: job.timeout,
            ..policy.for_dir(dir.clone())
        };
        let keep_scratch = policy.keep_scratch;
        thunks.push(Box::new(move || {
            let verdicts = run_job(&job, &dir, &job_policy);
            if !keep_scratch {
                let _ = fs::remove_dir_all(&dir);
            }
            JobOutcome {
                job_id: job.job_id,
                verdicts,
            }
        }));
    }

    let (outcomes, wall) = run_thunk_pool(thunks, policy.worker_count);
    Ok((outcomes, wall))
}

fn run_job(
    job: &TestJob,
    dir: &Path,
    policy: &ExecutionPolicy,
) -> std::result::Result<Vec<TestVerdict>, String> {
    let source = materialize_candidate(&job.candidate, dir).map_err(|e| e.to_string())?;
    let command = expand_command(&job.entry_command, &source);
    let mut verdicts = Vec::with_capacity(job.tests.len());
    for test in &job.tests {
        let verdict = run_test_at(&command, test, policy).map_err(|e| e.to_string())?;
        let passed = verdict.passed;
        verdicts.push(verdict);
        if job.fail_fast && !passed {
            break;
        }
    }
    Ok(verdicts)
}
