//! Dataset pipeline: screens a question pool, runs the collaborative loop
//! on what survives, and keeps only traces that pass validation.
//!
//! Two gates run before any solve. The *judge* asks whether the question
//! benefits from multiple expert specialties (first Yes/No token of the
//! reply; one re-ask, then a conservative No). The *difficulty probe* asks
//! a single model to solve the question outright and keeps it only when the
//! full reply — reasoning included — runs to at least
//! [`DIFFICULTY_TOKEN_THRESHOLD`] tokens by the backend's own count;
//! questions a model polishes off in a short breath don't need a committee.
//!
//! Validation re-derives everything from the raw transcript rather than
//! trusting stored flags: a trace is kept when some round reached critic
//! consensus, every turn respects the reasoning format, and the last drafted
//! answer grades correct against ground truth.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::{
    count_prompt_tokens, BackendError, ChatBackend, ChatRequest, WhitespaceCounter,
};
use crate::bench::grade_exact;
use crate::domain::{
    AgentKind, AgentRole, ChatMessage, ConsensusMark, Question, RunConfig, SolveStatus,
    TraceSample, TranscriptTurn,
};
use crate::orchestrator::{Engine, EngineOptions};
use crate::parsing::{detect_consensus, extract_boxed, validate_format, visible_text};

/// Minimum probe reply length (whitespace tokens, think text included) for a
/// question to count as hard enough.
pub const DIFFICULTY_TOKEN_THRESHOLD: u64 = 1024;

pub const JUDGE_SYSTEM_PROMPT: &str = "Does solving the following problem benefit from multiple \
distinct expert specialties? Answer Yes or No first.";
const JUDGE_REMINDER: &str = "Reminder: begin your answer with Yes or No.";

pub const PROBE_SYSTEM_PROMPT: &str =
    "Solve the following problem accurately. Reason step by step.";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record on line {line}: {message}")]
    Record { line: usize, message: String },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn gate_request(system: &str, question: &Question, suffix: &str, budget: u32, options: &EngineOptions) -> ChatRequest {
    ChatRequest {
        messages: vec![ChatMessage::system(system), ChatMessage::user(&question.statement)],
        max_tokens: budget,
        temperature: options.temperature,
        model_id: options.model_id.clone(),
        tag: format!("{}/{suffix}", question.id),
    }
}

/// Asks whether the question spans multiple specialties. The verdict is the
/// first token of the visible reply, normalized; anything that isn't a
/// recognizable Yes/No triggers one re-ask, and a second failure counts as
/// No — questionable candidates stay out of the dataset.
pub fn judge_multidisciplinary(
    question: &Question,
    backend: &dyn ChatBackend,
    budget: u32,
    options: &EngineOptions,
) -> Result<bool, BackendError> {
    let request = gate_request(JUDGE_SYSTEM_PROMPT, question, "judge", budget, options);
    let first = backend.complete(&request)?;
    if let Some(verdict) = yes_no(&first.content) {
        return Ok(verdict);
    }
    let mut retry = request;
    let user = retry.messages.last_mut().expect("gate request has messages");
    user.content.push_str("\n\n");
    user.content.push_str(JUDGE_REMINDER);
    let second = backend.complete(&retry)?;
    Ok(yes_no(&second.content).unwrap_or(false))
}

fn yes_no(text: &str) -> Option<bool> {
    let vis = visible_text(text);
    let first = vis.split_whitespace().next()?;
    let normalized: String =
        first.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
    match normalized.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Single-model difficulty probe: passes when the full reply (reasoning
/// included) is at least [`DIFFICULTY_TOKEN_THRESHOLD`] tokens long. Length
/// is the backend's `tokens_out`, so replayed fixtures can pin the recorded
/// figure instead of shipping a thousand literal words.
pub fn difficulty_probe(
    question: &Question,
    backend: &dyn ChatBackend,
    budget: u32,
    options: &EngineOptions,
) -> Result<bool, BackendError> {
    let request = gate_request(PROBE_SYSTEM_PROMPT, question, "probe", budget, options);
    let response = backend.complete(&request)?;
    Ok(response.tokens_out >= DIFFICULTY_TOKEN_THRESHOLD)
}

/// Per-trace validation result, each flag derived from the raw turns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub consensus: bool,
    pub format: bool,
    pub correct: bool,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn valid(&self) -> bool {
        self.consensus && self.format && self.correct
    }
}

/// Validates one trace. `ground_truth` overrides the truth embedded in the
/// trace's question when given.
///
/// - *Consensus*: some round (a segment opened by a recruiter turn) either
///   drafted with no critics at all, or contains a maximal consecutive run
///   of critic turns that all end `[Agree]`.
/// - *Format*: every response carries a closed think block, and drafting
///   turns state a boxed answer.
/// - *Correct*: the last drafted answer grades correct against ground truth.
pub fn is_valid_trace(trace: &TraceSample, ground_truth: Option<&str>) -> ValidationReport {
    let mut violations = Vec::new();

    let consensus = derive_consensus(&trace.turns);
    if !consensus {
        violations.push("no round reached critic consensus".into());
    }

    let mut format = !trace.turns.is_empty();
    if trace.turns.is_empty() {
        violations.push("trace has no turns".into());
    }
    for turn in &trace.turns {
        let report = validate_format(&turn.response, turn.agent.is_answer_bearing());
        if !report.ok() {
            format = false;
            for v in report.violations {
                violations.push(format!("turn {}: {v}", turn.ordinal));
            }
        }
    }

    let truth = ground_truth.or(trace.question.ground_truth.as_deref());
    let answer = trace
        .turns
        .iter()
        .rev()
        .find(|t| t.agent.is_answer_bearing())
        .and_then(|t| extract_boxed(&t.response).ok());
    let correct = match (answer.as_deref(), truth) {
        (Some(a), Some(t)) => {
            let ok = grade_exact(a, t);
            if !ok {
                violations.push(format!("final answer {a:?} does not match ground truth {t:?}"));
            }
            ok
        }
        (None, _) => {
            violations.push("no final boxed answer to grade".into());
            false
        }
        (Some(_), None) => {
            violations.push("no ground truth available".into());
            false
        }
    };

    ValidationReport { consensus, format, correct, violations }
}

fn derive_consensus(turns: &[TranscriptTurn]) -> bool {
    let mut starts: Vec<usize> = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.agent.kind == AgentKind::ExpertRecruiter)
        .map(|(i, _)| i)
        .collect();
    if starts.is_empty() {
        return false;
    }
    starts.push(turns.len());
    for window in starts.windows(2) {
        let round = &turns[window[0]..window[1]];
        let drafted = round.iter().any(|t| t.agent.is_answer_bearing());
        let critic_count = round.iter().filter(|t| t.agent.is_critic()).count();
        // A lone solver has nobody to object: vacuous consensus.
        if drafted && critic_count == 0 {
            return true;
        }
        // Otherwise look for a full critique pass — a maximal consecutive
        // run of critic turns — in which everyone agreed.
        let mut i = 0;
        while i < round.len() {
            if !round[i].agent.is_critic() {
                i += 1;
                continue;
            }
            let mut all_agree = true;
            while i < round.len() && round[i].agent.is_critic() {
                if detect_consensus(&round[i].response) != ConsensusMark::Agree {
                    all_agree = false;
                }
                i += 1;
            }
            if all_agree {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone)]
pub struct GenerateOptions {
    /// Number of valid traces to collect.
    pub target: usize,
    /// Shuffles the (deduplicated) pool deterministically before selection.
    pub seed: Option<u64>,
    /// Questions screened and solved concurrently.
    pub workers: usize,
    pub engine: EngineOptions,
}

impl GenerateOptions {
    pub fn new(target: usize) -> Self {
        Self { target, seed: None, workers: 1, engine: EngineOptions::default() }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GenerateStats {
    pub pool_size: usize,
    pub duplicates: usize,
    pub missing_ground_truth: usize,
    pub judge_rejected: usize,
    pub probe_rejected: usize,
    pub runs_attempted: usize,
    pub failed: usize,
    pub invalid_traces: usize,
    pub kept: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct GenerateReport {
    pub dataset: Vec<TraceSample>,
    pub stats: GenerateStats,
    /// True when the pool ran out before `target` valid traces were found.
    pub pool_exhausted: bool,
}

enum Screened {
    MissingTruth { id: String },
    JudgeRejected,
    ProbeRejected,
    Failed { id: String, was_run: bool, reason: String },
    Graded { trace: TraceSample, report: ValidationReport },
}

/// Runs the full pipeline over a pool until `target` valid traces are
/// collected or the pool is exhausted. Duplicated ids keep their first
/// occurrence; selection is a prefix of the (optionally shuffled) pool
/// order, so extending the pool never changes which earlier questions are
/// chosen. With `workers > 1` questions are processed in chunks of that
/// size on scoped threads; results are still tallied in pool order, keeping
/// the outcome identical to a sequential run.
pub fn generate_dataset(
    pool: &[Question],
    config: &RunConfig,
    backend: &dyn ChatBackend,
    options: &GenerateOptions,
) -> GenerateReport {
    let mut stats = GenerateStats { pool_size: pool.len(), ..GenerateStats::default() };

    let mut seen = BTreeSet::new();
    let mut candidates: Vec<&Question> = Vec::new();
    for question in pool {
        if seen.insert(question.id.as_str()) {
            candidates.push(question);
        } else {
            stats.duplicates += 1;
        }
    }
    if let Some(seed) = options.seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        candidates.shuffle(&mut rng);
    }

    let workers = options.workers.max(1);
    let mut dataset: Vec<TraceSample> = Vec::new();
    let mut index = 0;
    while index < candidates.len() && dataset.len() < options.target {
        let chunk = &candidates[index..(index + workers).min(candidates.len())];
        index += chunk.len();
        let results: Vec<Screened> = if workers == 1 {
            chunk.iter().map(|q| screen_question(q, config, backend, options)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|q| scope.spawn(move || screen_question(q, config, backend, options)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("pipeline worker panicked")).collect()
            })
        };
        for result in results {
            match result {
                Screened::MissingTruth { id } => {
                    stats.missing_ground_truth += 1;
                    stats.notes.push(format!("{id}: skipped, no ground truth"));
                }
                Screened::JudgeRejected => stats.judge_rejected += 1,
                Screened::ProbeRejected => stats.probe_rejected += 1,
                Screened::Failed { id, was_run, reason } => {
                    if was_run {
                        stats.runs_attempted += 1;
                    }
                    stats.failed += 1;
                    stats.notes.push(format!("{id}: {reason}"));
                }
                Screened::Graded { trace, report } => {
                    stats.runs_attempted += 1;
                    if report.valid() {
                        if dataset.len() < options.target {
                            dataset.push(trace);
                        }
                    } else {
                        stats.invalid_traces += 1;
                    }
                }
            }
        }
    }

    stats.kept = dataset.len();
    let pool_exhausted = dataset.len() < options.target;
    GenerateReport { dataset, stats, pool_exhausted }
}

fn screen_question(
    question: &Question,
    config: &RunConfig,
    backend: &dyn ChatBackend,
    options: &GenerateOptions,
) -> Screened {
    if question.ground_truth.is_none() {
        return Screened::MissingTruth { id: question.id.clone() };
    }
    let budget = config.default_max_tokens;
    match judge_multidisciplinary(question, backend, budget, &options.engine) {
        Ok(true) => {}
        Ok(false) => return Screened::JudgeRejected,
        Err(e) => {
            return Screened::Failed {
                id: question.id.clone(),
                was_run: false,
                reason: format!("judge failed: {e}"),
            }
        }
    }
    match difficulty_probe(question, backend, budget, &options.engine) {
        Ok(true) => {}
        Ok(false) => return Screened::ProbeRejected,
        Err(e) => {
            return Screened::Failed {
                id: question.id.clone(),
                was_run: false,
                reason: format!("probe failed: {e}"),
            }
        }
    }
    let engine_options =
        EngineOptions { tag_scope: Some(question.id.clone()), ..options.engine.clone() };
    let outcome = Engine::new(config, backend).with_options(engine_options).run(question);
    if outcome.status == SolveStatus::Aborted {
        return Screened::Failed {
            id: question.id.clone(),
            was_run: true,
            reason: format!("run aborted: {}", outcome.notes.join("; ")),
        };
    }
    let report = is_valid_trace(&outcome.trace, None);
    Screened::Graded { trace: outcome.trace, report }
}

// --- trace dataset records ---------------------------------------------

/// On-disk form of one collected trace. Prompt-side token counts are not
/// stored: imports recompute them from the recorded prompts, which is why
/// exports and re-imports agree byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M500Record {
    pub question: M500Question,
    pub turns: Vec<M500Turn>,
    pub final_answer: Option<String>,
    pub validation: M500Validation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M500Question {
    pub id: String,
    pub statement: String,
    pub category: Option<String>,
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M500Turn {
    pub ordinal: u32,
    pub role: AgentKind,
    pub solver_index: Option<u32>,
    pub role_description: Option<String>,
    pub prompt: Vec<ChatMessage>,
    pub response: String,
    pub budget: u32,
    pub tokens_out: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct M500Validation {
    pub consensus: bool,
    pub format: bool,
    pub correct: bool,
}

fn to_record(trace: &TraceSample) -> M500Record {
    M500Record {
        question: M500Question {
            id: trace.question.id.clone(),
            statement: trace.question.statement.clone(),
            category: trace.question.category.clone(),
            ground_truth: trace.question.ground_truth.clone(),
            source: trace.question.source.clone(),
        },
        turns: trace
            .turns
            .iter()
            .map(|t| M500Turn {
                ordinal: t.ordinal,
                role: t.agent.kind,
                solver_index: t.agent.solver_index,
                role_description: t.agent.role_description.clone(),
                prompt: t.prompt.clone(),
                response: t.response.clone(),
                budget: t.budget,
                tokens_out: t.tokens_out,
            })
            .collect(),
        final_answer: trace.final_answer.clone(),
        validation: M500Validation {
            consensus: trace.consensus_reached,
            format: trace.format_ok,
            correct: trace.answer_correct.unwrap_or(false),
        },
    }
}

fn from_record(record: M500Record) -> TraceSample {
    let question = Question {
        id: record.question.id,
        statement: record.question.statement,
        category: record.question.category,
        ground_truth: record.question.ground_truth,
        source: record.question.source,
    };
    let counter = WhitespaceCounter;
    let turns: Vec<TranscriptTurn> = record
        .turns
        .into_iter()
        .map(|t| TranscriptTurn {
            ordinal: t.ordinal,
            agent: AgentRole {
                kind: t.role,
                solver_index: t.solver_index,
                role_description: t.role_description,
            },
            tokens_in: count_prompt_tokens(&counter, &t.prompt),
            prompt: t.prompt,
            response: t.response,
            tokens_out: t.tokens_out,
            budget: t.budget,
        })
        .collect();
    let answer_correct = question.ground_truth.is_some().then_some(record.validation.correct);
    let valid =
        record.validation.consensus && record.validation.format && record.validation.correct;
    TraceSample {
        question,
        turns,
        final_answer: record.final_answer,
        consensus_reached: record.validation.consensus,
        format_ok: record.validation.format,
        answer_correct,
        valid,
    }
}

/// Writes traces as line-delimited JSON, optionally preceded by one
/// `{"config": ...}` header line. Callers are expected to export validated
/// traces; flags are written as-is.
pub fn export_m500<W: Write>(
    writer: &mut W,
    header: Option<&Value>,
    traces: &[TraceSample],
) -> Result<(), PipelineError> {
    if let Some(config) = header {
        let line = serde_json::to_string(&serde_json::json!({ "config": config }))?;
        writeln!(writer, "{line}")?;
    }
    for trace in traces {
        let line = serde_json::to_string(&to_record(trace))?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}

#[derive(Debug)]
pub struct M500Import {
    pub config: Option<Value>,
    pub traces: Vec<TraceSample>,
}

/// Reads a trace dataset, capturing the optional config header. Prompt-side
/// token counts are recomputed with the default counter.
pub fn import_m500<R: BufRead>(reader: R) -> Result<M500Import, PipelineError> {
    let mut config = None;
    let mut traces = Vec::new();
    let mut saw_record = false;
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = index + 1;
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| PipelineError::Record { line: lineno, message: e.to_string() })?;
        if !saw_record && config.is_none() && value.get("config").is_some() {
            config = Some(value["config"].clone());
            continue;
        }
        let record: M500Record = serde_json::from_value(value)
            .map_err(|e| PipelineError::Record { line: lineno, message: e.to_string() })?;
        traces.push(from_record(record));
        saw_record = true;
    }
    Ok(M500Import { config, traces })
}

// --- supervised fine-tuning export --------------------------------------

/// One training pair: a turn's full prompt and the response it produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub question_id: String,
    pub ordinal: u32,
    pub input_messages: Vec<ChatMessage>,
    pub target: String,
}

/// Splits traces into training batches: one batch per question, pairs in
/// ascending turn order, so co-training batches never mix questions.
pub fn export_sft_batches(traces: &[TraceSample]) -> Vec<Vec<SftPair>> {
    traces
        .iter()
        .map(|trace| {
            let mut turns: Vec<&TranscriptTurn> = trace.turns.iter().collect();
            turns.sort_by_key(|t| t.ordinal);
            turns
                .into_iter()
                .map(|t| SftPair {
                    question_id: trace.question.id.clone(),
                    ordinal: t.ordinal,
                    input_messages: t.prompt.clone(),
                    target: t.response.clone(),
                })
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct SftFileRecord<'a> {
    question_id: &'a str,
    batch_index: usize,
    ordinal: u32,
    messages: &'a [ChatMessage],
    target: &'a str,
}

/// Writes SFT batches as line-delimited JSON with the same optional config
/// header convention as the trace dataset.
pub fn write_sft_file<W: Write>(
    writer: &mut W,
    header: Option<&Value>,
    batches: &[Vec<SftPair>],
) -> Result<(), PipelineError> {
    if let Some(config) = header {
        let line = serde_json::to_string(&serde_json::json!({ "config": config }))?;
        writeln!(writer, "{line}")?;
    }
    for (batch_index, batch) in batches.iter().enumerate() {
        for pair in batch {
            let record = SftFileRecord {
                question_id: &pair.question_id,
                batch_index,
                ordinal: pair.ordinal,
                messages: &pair.input_messages,
                target: &pair.target,
            };
            let line = serde_json::to_string(&record)?;
            writeln!(writer, "{line}")?;
        }
    }
    Ok(())
}
