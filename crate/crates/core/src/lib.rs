//! Rank candidate programs with cheap verifiers before an expensive scorer.
//!
//! The pipeline: load a corpus of problems and generated candidate programs,
//! deduplicate each problem's pool, run one or more verifiers (syntax check,
//! linter, first-N tests, full test suite) in a sandboxed worker pool, then
//! rank the surviving candidates with a pluggable scorer. Selection quality
//! is summarized by a best-of-k metric over the ranked pool and throughput
//! by a programs-per-second meter, so cheap-but-weak and slow-but-strong
//! configurations can be compared on both axes.

pub mod analysis;
pub mod dataset;
pub mod error;
pub mod model;
pub mod ranking;
pub mod sandbox;
pub mod scorer;
pub mod verifiers;

pub use error::{Error, Result};
