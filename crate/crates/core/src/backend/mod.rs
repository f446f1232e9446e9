//! Chat backends: the [`ChatBackend`] trait plus the two implementations the
//! engine ships with — deterministic fixture replay ([`scripted`]) and an
//! OpenAI-compatible HTTP client ([`remote`]).
//!
//! Prompt-side token counts are computed locally by the caller through a
//! [`TokenCounter`], never taken from backend responses. Keeping the counter
//! on this side of the trait means replayed and imported traces reproduce
//! identical `tokens_in` figures regardless of what the original server
//! reported.

pub mod remote;
pub mod scripted;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ChatMessage;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { message: String, attempts: u32 },
    #[error("script exhausted for tag {tag:?} after {consumed} response(s)")]
    ScriptExhausted { tag: String, consumed: usize },
    #[error("request budget must be nonzero")]
    BudgetZero,
    #[error("request carries no messages")]
    EmptyRequest,
    #[error("fixture line {line}: {message}")]
    FixtureParse { line: usize, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Why a completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    /// The model stopped on its own.
    Stop,
    /// The token budget cut the response off.
    LengthCapped,
}

/// One completion request. The `tag` names the protocol step being served
/// (e.g. `"solver-draft"` or `"q7/evaluator"`); scripted backends key their
/// fixtures on it and audits record it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    pub temperature: f64,
    pub model_id: String,
    pub tag: String,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        if self.max_tokens == 0 {
            return Err(BackendError::BudgetZero);
        }
        Ok(())
    }
}

/// One completion. `tokens_out` is the backend's own count of generated
/// tokens (fixtures may pin it; the remote client takes the server's usage
/// figure). There is deliberately no `tokens_in` here — see the module docs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub tokens_out: u64,
    pub finish: FinishReason,
}

/// Counts tokens in prompt text. The default is whitespace word counting —
/// crude but fast, deterministic, and monotone under concatenation, which is
/// all the budget accounting needs. Swap in a real tokenizer via the trait
/// when calibrated counts matter.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// Whitespace-delimited word counter: `""` counts 0, `"hello world"` 2.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceCounter;

impl TokenCounter for WhitespaceCounter {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

/// Counts tokens in `text` with the default counter.
pub fn count_tokens(text: &str) -> u64 {
    WhitespaceCounter.count(text)
}

/// Prompt-side token count for a full message list: the sum over message
/// contents. Roles are metadata, not spend.
pub fn count_prompt_tokens(counter: &dyn TokenCounter, messages: &[ChatMessage]) -> u64 {
    messages.iter().map(|m| counter.count(&m.content)).sum()
}

/// One audited backend call.
#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub tag: String,
    pub max_tokens: u32,
    pub tokens_out: u64,
}

/// Thread-safe append-only record of every completion a backend served.
/// The engine asserts `audit_len() == transcript length` after each run:
/// every model call must surface as a transcript turn and vice versa.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn record(&self, entry: AuditEntry) {
        self.entries.lock().expect("audit lock").push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("audit lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn snapshot(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit lock").clone()
    }
}

/// A chat-completion provider. Implementations must be safe to share across
/// worker threads and must audit every served call.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Number of completions served so far.
    fn audit_len(&self) -> usize;

    /// Copy of the audit trail.
    fn audit(&self) -> Vec<AuditEntry>;
}
