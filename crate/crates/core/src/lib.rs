//! Adaptive multi-agent collaborative reasoning engine.
//!
//! A question is solved by a roster of role-playing agents driven over a chat
//! backend: an Expert Recruiter proposes specialist personas, Problem Solvers
//! draft and critique solutions until they reach consensus, an Evaluator
//! grades the result, and (optionally) a CEO agent steers the next round by
//! adjusting the roster size, the discussion direction, and the per-call
//! token budget.
//!
//! The crate is organised along the pipeline:
//!
//! - [`domain`]: plain value types (questions, transcripts, configs, outcomes)
//! - [`prompts`]: the fixed template catalog and `${var}` substitution
//! - [`parsing`]: structured-output parsers for each agent role
//! - [`backend`]: the [`backend::ChatBackend`] trait plus scripted-replay and
//!   OpenAI-compatible HTTP implementations
//! - [`orchestrator`]: the round/critique/evaluate state machine
//! - [`datapipe`]: question gating, trace validation, and dataset export
//! - [`bench`]: graders, benchmark runs, and budget/agent-count sweeps
//! - [`testkit`]: deterministic mock backends shared by tests and examples

pub mod backend;
pub mod bench;
pub mod datapipe;
pub mod domain;
pub mod orchestrator;
pub mod parsing;
pub mod prompts;
pub mod testkit;
