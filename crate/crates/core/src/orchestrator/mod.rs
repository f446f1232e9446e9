//! The collaborative solve loop.
//!
//! Each round runs recruit → draft → critique/revise → execute → evaluate:
//!
//! 1. The recruiter names `solver_count` experts for this round.
//! 2. The first expert drafts a solution.
//! 3. Up to `critic_iterations` times: every other expert critiques the
//!    current solution in sequence (each sees the critiques before it). If
//!    all of them end with `[Agree]`, the round has consensus and critique
//!    stops; otherwise the drafter revises — also after the final critique
//!    pass, so the evaluator never judges a solution that ignored feedback.
//! 4. The executor optionally runs code found in the solution. It makes no
//!    model call, so it records no turn and spends no tokens.
//! 5. The evaluator grades the solution: correctness 1 solves the question,
//!    correctness 0 carries advice into the next round.
//!
//! With the CEO enabled, the CEO reviews *every* evaluator verdict — even a
//! passing one, so the stop check itself is on the record — and its directive
//! sets the next round's solver count, discussion direction, and token
//! budget. The budget applies to every call until the next directive; the
//! directive-producing CEO turn itself still runs on the round's old budget.
//!
//! Agents whose output must parse (recruiter, critics, evaluator, CEO) get
//! exactly one re-ask on parse failure: the same prompt with a one-line
//! reminder appended to the final user message. The re-ask is recorded as an
//! extra transcript turn, keeping the invariant that every backend call is a
//! turn. A second failure falls back per role — critics count as
//! `[Disagree]`, the evaluator as an incorrect verdict, the CEO as
//! continue-with-previous-settings — except the recruiter, without whose
//! roster the run aborts.

pub mod executor;

use std::collections::BTreeMap;
use std::sync::LazyLock;

use thiserror::Error;

use crate::backend::{
    count_prompt_tokens, BackendError, ChatBackend, ChatRequest, TokenCounter, WhitespaceCounter,
};
use crate::domain::{
    AgentRole, CeoDecision, ChatMessage, ConsensusMark, EvaluatorVerdict, MessageRole, Question,
    ResourceLedger, RunConfig, SolveOutcome, SolveStatus, TraceSample, TranscriptTurn,
};
use crate::parsing::{detect_consensus, extract_boxed, parse_ceo_with, parse_evaluator, parse_roster, visible_text};
use crate::prompts::{PromptError, PromptRole, TemplateSet};
use executor::{run_executor, ExecutorRunner, Passthrough};

/// Advice binding for the first round, before any evaluator has spoken.
pub const DEFAULT_ADVICE: &str = "No advice yet.";

const RECRUITER_REMINDER: &str =
    "Reminder: reply with only the numbered list of expert descriptions, one per line.";
const CRITIC_REMINDER: &str =
    "Reminder: end your response with the special token [Agree] or [Disagree].";
const EVALUATOR_REMINDER: &str =
    "Reminder: respond using the '### Correctness:', '### Confidence:', and '### Advice:' headers.";
const CEO_REMINDER: &str = "Reminder: respond using the '### Decision:', '### Recruit Number:', '### Direction:', and '### Maximum Tokens:' headers.";

static DEFAULT_TEMPLATES: LazyLock<TemplateSet> = LazyLock::new(TemplateSet::builtin);
static DEFAULT_RUNNER: Passthrough = Passthrough;
static DEFAULT_COUNTER: WhitespaceCounter = WhitespaceCounter;

/// Sampling/addressing options that shape requests but not the protocol.
#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub model_id: String,
    pub temperature: f64,
    /// Optional tag prefix: scope `"q7"` makes the engine request tags like
    /// `"q7/solver-draft"`, which keeps concurrent questions from draining
    /// each other's script fixtures.
    pub tag_scope: Option<String>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { model_id: "default".into(), temperature: 0.0, tag_scope: None }
    }
}

/// Upper bound on transcript turns for a run under `config`, assuming no
/// re-asks: every round spends one recruiter, one draft, `critic_iterations`
/// full critique-plus-revision passes over `total_agents` solvers, and one
/// evaluator (plus one CEO turn per round when enabled). Runs that reach
/// consensus or stop early use fewer; re-asks may add one turn each.
pub fn turn_bound(config: &RunConfig) -> u64 {
    let per_round = 3
        + u64::from(config.critic_iterations) * u64::from(config.total_agents)
        + u64::from(config.ceo_enabled);
    u64::from(config.total_iterations) * per_round
}

#[derive(Debug, Error)]
enum RunError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Abort(String),
}

pub struct Engine<'a> {
    config: &'a RunConfig,
    backend: &'a dyn ChatBackend,
    templates: &'a TemplateSet,
    runner: &'a dyn ExecutorRunner,
    counter: &'a dyn TokenCounter,
    options: EngineOptions,
}

impl<'a> Engine<'a> {
    pub fn new(config: &'a RunConfig, backend: &'a dyn ChatBackend) -> Self {
        Self {
            config,
            backend,
            templates: &DEFAULT_TEMPLATES,
            runner: &DEFAULT_RUNNER,
            counter: &DEFAULT_COUNTER,
            options: EngineOptions::default(),
        }
    }

    pub fn with_templates(mut self, templates: &'a TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_runner(mut self, runner: &'a dyn ExecutorRunner) -> Self {
        self.runner = runner;
        self
    }

    pub fn with_counter(mut self, counter: &'a dyn TokenCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn with_options(mut self, options: EngineOptions) -> Self {
        self.options = options;
        self
    }

    /// Runs the full loop on one question. Never panics on bad input or
    /// backend failure: irrecoverable problems produce an `Aborted` outcome
    /// whose notes say what went wrong.
    pub fn run(&self, question: &Question) -> SolveOutcome {
        let mut turns = Vec::new();
        let mut notes = Vec::new();
        if let Err(e) = self.config.validate() {
            notes.push(format!("invalid run configuration: {e}"));
            return self.finish(question, SolveStatus::Aborted, turns, notes, 0);
        }
        if let Err(e) = question.validate() {
            notes.push(format!("invalid question: {e}"));
            return self.finish(question, SolveStatus::Aborted, turns, notes, 0);
        }
        match self.run_inner(question, &mut turns, &mut notes) {
            Ok((status, rounds)) => self.finish(question, status, turns, notes, rounds),
            Err(e) => {
                notes.push(format!("run aborted: {e}"));
                let rounds = turns.iter().filter(|t| t.agent.kind == crate::domain::AgentKind::ExpertRecruiter).count() as u32;
                self.finish(question, SolveStatus::Aborted, turns, notes, rounds)
            }
        }
    }

    fn run_inner(
        &self,
        question: &Question,
        turns: &mut Vec<TranscriptTurn>,
        notes: &mut Vec<String>,
    ) -> Result<(SolveStatus, u32), RunError> {
        let cfg = self.config;
        let mut advice = DEFAULT_ADVICE.to_string();
        let mut solver_count = cfg.total_agents;
        let mut budget = cfg.default_max_tokens;
        let mut reasks: u32 = 0;
        let mut bound: u64 = 0;
        let mut rounds_used: u32 = 0;
        let mut status = SolveStatus::Exhausted;

        for round in 1..=cfg.total_iterations {
            rounds_used = round;
            bound += 3
                + u64::from(cfg.critic_iterations) * u64::from(solver_count)
                + u64::from(cfg.ceo_enabled);

            // (1) Recruit this round's experts.
            let recruiter_bindings = bind(&[
                ("task_description", question.statement.as_str()),
                ("cnt_critic_agents", &solver_count.to_string()),
                ("advice", &advice),
            ]);
            let messages = self.templates.render_role(PromptRole::Recruiter, &recruiter_bindings)?;
            let (roster, _) = self.call_parsed(
                "recruiter",
                AgentRole::recruiter(),
                messages,
                budget,
                turns,
                &mut reasks,
                RECRUITER_REMINDER,
                |text| parse_roster(text, solver_count as usize).ok(),
            )?;
            let roster = roster.ok_or_else(|| {
                RunError::Abort(format!("round {round}: recruiter roster unparseable after re-ask"))
            })?;

            // (2) The first expert drafts. History is fresh each round; the
            // evaluator's advice is what carries across rounds.
            let draft_bindings = bind(&[
                ("task_description", question.statement.as_str()),
                ("role_description", &roster[0]),
                ("advice", &advice),
            ]);
            let mut history: Vec<(String, String)> = Vec::new();
            let messages = self.templates.render_role(PromptRole::SolverDraft, &draft_bindings)?;
            let mut solution =
                self.call("solver-draft", AgentRole::solver(0, roster[0].clone()), messages, budget, turns)?;
            history.push((roster[0].clone(), visible_text(&solution).trim().to_string()));

            // (3) Critique and revise. A lone solver has no critics, so its
            // round reaches consensus vacuously.
            let mut consensus = solver_count == 1;
            'critique: for _pass in 0..cfg.critic_iterations {
                if solver_count == 1 {
                    break;
                }
                let mut all_agree = true;
                for index in 1..solver_count {
                    let description = roster[index as usize].clone();
                    let critic_bindings = bind(&[
                        ("role_description", &description),
                        ("task_description", question.statement.as_str()),
                        ("advice", &advice),
                    ]);
                    let mut messages =
                        self.templates.render_role(PromptRole::SolverCritic, &critic_bindings)?;
                    prepend_history(&mut messages, &history);
                    let (mark, raw) = self.call_parsed(
                        "solver-critic",
                        AgentRole::solver(index, description.clone()),
                        messages,
                        budget,
                        turns,
                        &mut reasks,
                        CRITIC_REMINDER,
                        |text| match detect_consensus(text) {
                            ConsensusMark::Missing => None,
                            mark => Some(mark),
                        },
                    )?;
                    let mark = mark.unwrap_or_else(|| {
                        notes.push(format!(
                            "round {round}: critic {index} gave no consensus token; counted as [Disagree]"
                        ));
                        ConsensusMark::Disagree
                    });
                    history.push((description, visible_text(&raw).trim().to_string()));
                    if mark != ConsensusMark::Agree {
                        all_agree = false;
                    }
                }
                if all_agree {
                    consensus = true;
                    break 'critique;
                }
                let mut messages = self.templates.render_role(PromptRole::SolverDraft, &draft_bindings)?;
                prepend_history(&mut messages, &history);
                solution = self.call(
                    "solver-revision",
                    AgentRole::solver(0, roster[0].clone()),
                    messages,
                    budget,
                    turns,
                )?;
                history.push((roster[0].clone(), visible_text(&solution).trim().to_string()));
            }
            let _ = consensus; // consensus is re-derived from the transcript in finish()

            // (4) Execute code in the settled solution, if a runner is set.
            let executed = run_executor(self.runner, visible_text(&solution).trim());

            // (5) Evaluate.
            let evaluator_bindings = bind(&[
                ("all_role_description", &roster.join("; ")),
                ("task_description", question.statement.as_str()),
                ("solution", &executed),
            ]);
            let messages = self.templates.render_role(PromptRole::Evaluator, &evaluator_bindings)?;
            let (verdict, _) = self.call_parsed(
                "evaluator",
                AgentRole::evaluator(),
                messages,
                budget,
                turns,
                &mut reasks,
                EVALUATOR_REMINDER,
                |text| parse_evaluator(text).ok(),
            )?;
            let verdict = verdict.unwrap_or_else(|| {
                notes.push(format!("round {round}: evaluator verdict unparseable; counted as incorrect"));
                EvaluatorVerdict { correctness: 0, confidence: None, advice: "unparseable verdict".into() }
            });
            let solved = verdict.correctness == 1;

            if cfg.ceo_enabled {
                let tokens_spent: u64 = turns.iter().map(|t| t.tokens_in + t.tokens_out).sum();
                let ledger = ResourceLedger {
                    round_index: round,
                    rounds_max: cfg.total_iterations,
                    tokens_spent,
                    solver_count,
                    current_budget: budget,
                };
                let ceo_bindings = bind(&[
                    ("task_description", question.statement.as_str()),
                    ("current_solution", &executed),
                    ("evaluation_feedback", &verdict.advice),
                    ("current_resources", &ledger.summary()),
                ]);
                let messages = self.templates.render_role(PromptRole::Ceo, &ceo_bindings)?;
                let (directive, _) = self.call_parsed(
                    "ceo",
                    AgentRole::ceo(),
                    messages,
                    budget,
                    turns,
                    &mut reasks,
                    CEO_REMINDER,
                    |text| parse_ceo_with(text, &cfg.token_budget_menu, cfg.recruit_bounds).ok(),
                )?;
                // A correct solution ends the run no matter what the CEO
                // decided; the directive only steers rounds that continue.
                if solved {
                    status = SolveStatus::Solved;
                    break;
                }
                match directive {
                    Some(parsed) => {
                        for note in parsed.notes {
                            notes.push(format!("round {round}: {note}"));
                        }
                        if parsed.directive.decision == CeoDecision::Stop {
                            notes.push(format!(
                                "round {round}: CEO stopped the run with an incorrect solution"
                            ));
                            break;
                        }
                        solver_count = parsed.directive.recruit_number;
                        advice = parsed.directive.direction;
                        budget = parsed.directive.max_tokens;
                    }
                    None => {
                        notes.push(format!(
                            "round {round}: CEO directive unparseable; continuing with previous settings"
                        ));
                        advice = verdict.advice;
                    }
                }
            } else if solved {
                status = SolveStatus::Solved;
                break;
            } else {
                advice = verdict.advice;
            }
        }

        debug_assert!(
            turns.len() as u64 <= bound + u64::from(reasks),
            "run produced {} turns, over its bound of {bound} plus {reasks} re-ask(s)",
            turns.len(),
        );
        Ok((status, rounds_used))
    }

    /// Sends one completion request and records it as a transcript turn.
    /// The prompt-side token count is computed locally so replayed and
    /// imported traces reproduce it exactly.
    fn call(
        &self,
        tag_suffix: &str,
        agent: AgentRole,
        messages: Vec<ChatMessage>,
        budget: u32,
        turns: &mut Vec<TranscriptTurn>,
    ) -> Result<String, RunError> {
        let request = ChatRequest {
            messages,
            max_tokens: budget,
            temperature: self.options.temperature,
            model_id: self.options.model_id.clone(),
            tag: self.tag(tag_suffix),
        };
        let response = self.backend.complete(&request)?;
        let tokens_in = count_prompt_tokens(self.counter, &request.messages);
        turns.push(TranscriptTurn {
            ordinal: turns.len() as u32,
            agent,
            prompt: request.messages,
            response: response.content.clone(),
            tokens_in,
            tokens_out: response.tokens_out,
            budget,
        });
        Ok(response.content)
    }

    /// Like [`Engine::call`], but for agents whose output must parse. On
    /// parse failure the same agent is asked once more with `reminder`
    /// appended to the final user message; both attempts are transcript
    /// turns. Returns the parsed value (or `None` after two failures) and
    /// the raw text of the last attempt.
    #[allow(clippy::too_many_arguments)]
    fn call_parsed<T>(
        &self,
        tag_suffix: &str,
        agent: AgentRole,
        messages: Vec<ChatMessage>,
        budget: u32,
        turns: &mut Vec<TranscriptTurn>,
        reasks: &mut u32,
        reminder: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(Option<T>, String), RunError> {
        let first = self.call(tag_suffix, agent.clone(), messages.clone(), budget, turns)?;
        if let Some(value) = parse(&first) {
            return Ok((Some(value), first));
        }
        let mut retry = messages;
        match retry.iter_mut().rev().find(|m| m.role == MessageRole::User) {
            Some(last_user) => {
                last_user.content.push_str("\n\n");
                last_user.content.push_str(reminder);
            }
            None => retry.push(ChatMessage::user(reminder)),
        }
        *reasks += 1;
        let second = self.call(tag_suffix, agent, retry, budget, turns)?;
        if let Some(value) = parse(&second) {
            return Ok((Some(value), second));
        }
        Ok((None, second))
    }

    fn tag(&self, suffix: &str) -> String {
        match &self.options.tag_scope {
            Some(scope) => format!("{scope}/{suffix}"),
            None => suffix.to_string(),
        }
    }

    /// Assembles the outcome. Trace flags are not taken from loop state:
    /// they are re-derived from the raw transcript by the same validator the
    /// data pipeline uses, so a stored flag can never disagree with what the
    /// turns actually show.
    fn finish(
        &self,
        question: &Question,
        status: SolveStatus,
        turns: Vec<TranscriptTurn>,
        notes: Vec<String>,
        iterations_used: u32,
    ) -> SolveOutcome {
        let final_answer = turns
            .iter()
            .rev()
            .find(|t| t.agent.is_answer_bearing())
            .and_then(|t| extract_boxed(&t.response).ok());
        let total_tokens = turns.iter().map(|t| t.tokens_in + t.tokens_out).sum();
        let mut trace = TraceSample {
            question: question.clone(),
            turns,
            final_answer: final_answer.clone(),
            consensus_reached: false,
            format_ok: false,
            answer_correct: None,
            valid: false,
        };
        let report = crate::datapipe::is_valid_trace(&trace, None);
        trace.consensus_reached = report.consensus;
        trace.format_ok = report.format;
        trace.answer_correct = trace.question.ground_truth.is_some().then_some(report.correct);
        trace.valid = report.valid();
        SolveOutcome { status, final_answer, trace, iterations_used, total_tokens, notes }
    }
}

/// Runs the loop without CEO control. Aborts (rather than silently
/// reconfiguring) if the config asks for the CEO, so callers cannot get a
/// different protocol than they requested.
pub fn solve(question: &Question, config: &RunConfig, backend: &dyn ChatBackend) -> SolveOutcome {
    if config.ceo_enabled {
        return entry_mismatch(question, "solve() requires ceo_enabled = false; use solve_with_ceo()");
    }
    Engine::new(config, backend).run(question)
}

/// Runs the loop with the CEO reviewing every round.
pub fn solve_with_ceo(
    question: &Question,
    config: &RunConfig,
    backend: &dyn ChatBackend,
) -> SolveOutcome {
    if !config.ceo_enabled {
        return entry_mismatch(question, "solve_with_ceo() requires ceo_enabled = true; use solve()");
    }
    Engine::new(config, backend).run(question)
}

fn entry_mismatch(question: &Question, note: &str) -> SolveOutcome {
    SolveOutcome {
        status: SolveStatus::Aborted,
        final_answer: None,
        trace: TraceSample {
            question: question.clone(),
            turns: Vec::new(),
            final_answer: None,
            consensus_reached: false,
            format_ok: false,
            answer_correct: None,
            valid: false,
        },
        iterations_used: 0,
        total_tokens: 0,
        notes: vec![note.to_string()],
    }
}

fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Prepends the round's chat history to the user message. Entries are the
/// visible (think-stripped) solver contributions so far, labeled by persona.
/// An empty history adds nothing — the round's draft starts from a clean
/// prompt.
fn prepend_history(messages: &mut [ChatMessage], history: &[(String, String)]) {
    if history.is_empty() {
        return;
    }
    let body = history
        .iter()
        .map(|(label, content)| format!("[{label}]: {content}"))
        .collect::<Vec<_>>()
        .join("\n\n");
    if let Some(user) = messages.iter_mut().rev().find(|m| m.role == MessageRole::User) {
        let original = std::mem::take(&mut user.content);
        user.content = format!("Here is the chat history:\n<history>\n\n{body}\n\n</history>\n\n{original}");
    }
}
