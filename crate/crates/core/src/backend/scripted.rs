//! Deterministic fixture replay. A script is a line-delimited JSON file of
//! [`FixtureEntry`] records; the backend serves them per tag in ascending
//! `index` order, so a recorded run replays turn for turn.
//!
//! Multi-question pipelines request tags like `"q7/solver-draft"`. A script
//! may either pin entries to those full tags or provide bare-suffix entries
//! (`"solver-draft"`) shared as a template: each distinct requested tag then
//! advances its own cursor over the shared sequence, which keeps replay
//! deterministic even when questions are served from worker threads in
//! arbitrary order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{
    count_tokens, AuditEntry, AuditLog, BackendError, ChatBackend, ChatRequest, ChatResponse,
    FinishReason,
};

/// One scripted completion. `tokens_out` may be pinned to mirror a recorded
/// run; when absent the default counter supplies it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub tag: String,
    pub index: u32,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens_out: Option<u64>,
}

/// Parses a line-delimited JSON script. Blank lines are skipped; duplicate
/// `(tag, index)` pairs are rejected because they would make replay order
/// ambiguous.
pub fn load_script(path: &Path) -> Result<Vec<FixtureEntry>, BackendError> {
    let text = fs::read_to_string(path)?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Vec<FixtureEntry>, BackendError> {
    let mut entries = Vec::new();
    let mut seen: HashMap<(String, u32), usize> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: FixtureEntry = serde_json::from_str(line).map_err(|e| {
            BackendError::FixtureParse { line: lineno + 1, message: e.to_string() }
        })?;
        if let Some(prev) = seen.insert((entry.tag.clone(), entry.index), lineno + 1) {
            return Err(BackendError::FixtureParse {
                line: lineno + 1,
                message: format!(
                    "duplicate entry for tag {:?} index {} (first on line {prev})",
                    entry.tag, entry.index
                ),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Replays fixture entries keyed by request tag.
pub struct ScriptedBackend {
    /// Entry contents per tag, sorted by fixture index.
    sequences: HashMap<String, Vec<FixtureEntry>>,
    /// Consumption cursor per *requested* tag (not per entry tag): two
    /// questions drawing on the same bare-suffix sequence advance
    /// independent cursors.
    cursors: Mutex<HashMap<String, usize>>,
    audit: AuditLog,
}

impl ScriptedBackend {
    pub fn from_entries(entries: Vec<FixtureEntry>) -> Self {
        let mut sequences: HashMap<String, Vec<FixtureEntry>> = HashMap::new();
        for entry in entries {
            sequences.entry(entry.tag.clone()).or_default().push(entry);
        }
        for seq in sequences.values_mut() {
            seq.sort_by_key(|e| e.index);
        }
        Self { sequences, cursors: Mutex::new(HashMap::new()), audit: AuditLog::default() }
    }

    pub fn from_script(path: &Path) -> Result<Self, BackendError> {
        Ok(Self::from_entries(load_script(path)?))
    }

    /// Finds the sequence serving `tag`: an exact match wins, otherwise the
    /// bare suffix after the first `/` (the template fallback).
    fn sequence_for(&self, tag: &str) -> Option<&Vec<FixtureEntry>> {
        if let Some(seq) = self.sequences.get(tag) {
            return Some(seq);
        }
        let suffix = tag.split_once('/')?.1;
        self.sequences.get(suffix)
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let sequence = self.sequence_for(&request.tag).ok_or_else(|| {
            BackendError::ScriptExhausted { tag: request.tag.clone(), consumed: 0 }
        })?;
        // Hold the cursor lock across lookup and increment so concurrent
        // callers on the same tag consume distinct entries.
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry(request.tag.clone()).or_insert(0);
        let entry = sequence.get(*cursor).ok_or_else(|| BackendError::ScriptExhausted {
            tag: request.tag.clone(),
            consumed: *cursor,
        })?;
        *cursor += 1;
        drop(cursors);

        // Replay fidelity: the content is never truncated to the budget.
        // The budget only decides the finish reason.
        let tokens_out = entry.tokens_out.unwrap_or_else(|| count_tokens(&entry.content));
        let finish = if tokens_out >= u64::from(request.max_tokens) {
            FinishReason::LengthCapped
        } else {
            FinishReason::Stop
        };
        self.audit.record(AuditEntry {
            tag: request.tag.clone(),
            max_tokens: request.max_tokens,
            tokens_out,
        });
        Ok(ChatResponse { content: entry.content.clone(), tokens_out, finish })
    }

    fn audit_len(&self) -> usize {
        self.audit.len()
    }

    fn audit(&self) -> Vec<AuditEntry> {
        self.audit.snapshot()
    }
}
