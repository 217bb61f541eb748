use std::io;

use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of an input file failed to parse.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    /// A candidate referenced a problem id that is not in the corpus.
    #[error("{path}:{line}: candidate references unknown problem `{problem_id}`")]
    UnknownProblem {
        path: String,
        line: usize,
        problem_id: String,
    },

    /// Invalid configuration or arguments.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A candidate had no score when one was required for ranking.
    #[error("missing score for candidate `{candidate_id}`")]
    MissingScore { candidate_id: String },

    /// A candidate had no verdict from the named verifier.
    #[error("missing verdict for candidate `{candidate_id}` from verifier `{verifier_id}`")]
    MissingVerdict {
        candidate_id: String,
        verifier_id: String,
    },

    /// A candidate had no ground-truth outcome when building an outcome vector.
    #[error("missing ground-truth outcome for candidate `{candidate_id}`")]
    MissingOutcome { candidate_id: String },

    /// Selection size out of range for the pool.
    #[error("k = {k} is out of range for a pool of {n}")]
    KOutOfRange { k: usize, n: usize },

    /// Outcome vectors may only contain 0 or 1.
    #[error("outcome vector entry {index} is {value}, expected 0 or 1")]
    BadAlpha { index: usize, value: u8 },

    /// A numeric value was NaN or infinite where a finite one is required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A subprocess could not be started at all.
    #[error("failed to spawn `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: io::Error,
    },

    /// A verifier's external tool misbehaved (crashed or hung).
    #[error("verifier `{verifier_id}` tool failure on `{candidate_id}`: {message}")]
    Tool {
        verifier_id: String,
        candidate_id: String,
        message: String,
    },

    /// Remote scorer connection or stream failure. Retryable.
    #[error("remote scorer transport: {0}")]
    RemoteTransport(String),

    /// Remote scorer returned a malformed or mismatched response. Not retryable.
    #[error("remote scorer protocol: {0}")]
    RemoteProtocol(String),

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}: {message}")]
    TrainDiverged { epoch: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
