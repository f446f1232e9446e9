//! Shared value types: questions, chat messages, transcript turns, run
//! configuration, directives, verdicts, and solve outcomes.
//!
//! Everything here is a plain serde value. The few invariants that the rest
//! of the engine leans on (agent-count floor, 1-based recruit bounds, budgets
//! drawn from the menu, 0/1 correctness) are checked by the `validate`
//! methods so downstream code can take them for granted.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Token budget menu offered to the CEO. `0` is part of the published menu
/// but is never a legal directive value; see [`CeoDirective::validate`].
pub const DEFAULT_TOKEN_BUDGET_MENU: [u32; 6] = [0, 2048, 4096, 8192, 16384, 32000];

/// Inclusive bounds on how many experts the CEO may recruit per round.
pub const DEFAULT_RECRUIT_BOUNDS: (u32, u32) = (1, 4);

/// Validation failures for domain values.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainError {
    #[error("question id must be non-empty")]
    EmptyQuestionId,
    #[error("question statement must be non-empty")]
    EmptyStatement,
    #[error("total_agents must be at least 2 (one drafting solver plus at least one critic), got {0}")]
    TooFewAgents(u32),
    #[error("{0} must be at least 1")]
    ZeroField(&'static str),
    #[error("token budget menu must be non-empty")]
    EmptyBudgetMenu,
    #[error("recruit bounds [{0}, {1}] are not a valid 1-based range")]
    BadRecruitBounds(u32, u32),
    #[error("recruit number {got} outside bounds [{lo}, {hi}]")]
    RecruitOutOfBounds { got: u32, lo: u32, hi: u32 },
    #[error("max_tokens {0} is not a nonzero entry of the budget menu")]
    BudgetOffMenu(u32),
    #[error("correctness must be 0 or 1, got {0}")]
    BadCorrectness(u8),
    #[error("advice must be non-empty when correctness is 0")]
    MissingAdvice,
    #[error("role {0:?} must not carry solver_index or role_description")]
    UnexpectedSolverFields(AgentKind),
    #[error("problem solver roles need both solver_index and role_description")]
    MissingSolverFields,
}

/// A task to solve. `ground_truth` is required by the data pipeline (traces
/// cannot be validated without it) but optional for ad-hoc solves.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub statement: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl Question {
    pub fn new(id: impl Into<String>, statement: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            statement: statement.into(),
            category: None,
            ground_truth: None,
            source: None,
        }
    }

    pub fn with_ground_truth(mut self, truth: impl Into<String>) -> Self {
        self.ground_truth = Some(truth.into());
        self
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.id.trim().is_empty() {
            return Err(DomainError::EmptyQuestionId);
        }
        if self.statement.trim().is_empty() {
            return Err(DomainError::EmptyStatement);
        }
        Ok(())
    }
}

/// Chat role for a single prompt message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
}

/// One message in a prompt. Prompt lists always start with exactly one
/// system message followed by user/assistant turns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: MessageRole::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: MessageRole::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: MessageRole::Assistant, content: content.into() }
    }
}

/// The fixed cast of agent kinds in the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Ceo,
    ExpertRecruiter,
    ProblemSolver,
    Executor,
    Evaluator,
}

/// A concrete agent identity. Problem solvers carry their roster index
/// (index 0 drafts and revises; higher indices critique) and the recruited
/// role description; every other kind carries neither.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRole {
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role_description: Option<String>,
}

impl AgentRole {
    pub fn ceo() -> Self {
        Self { kind: AgentKind::Ceo, solver_index: None, role_description: None }
    }

    pub fn recruiter() -> Self {
        Self { kind: AgentKind::ExpertRecruiter, solver_index: None, role_description: None }
    }

    pub fn solver(index: u32, description: impl Into<String>) -> Self {
        Self {
            kind: AgentKind::ProblemSolver,
            solver_index: Some(index),
            role_description: Some(description.into()),
        }
    }

    pub fn executor() -> Self {
        Self { kind: AgentKind::Executor, solver_index: None, role_description: None }
    }

    pub fn evaluator() -> Self {
        Self { kind: AgentKind::Evaluator, solver_index: None, role_description: None }
    }

    /// True for the drafting/revising solver (roster index 0), whose turns
    /// must carry a boxed final answer.
    pub fn is_answer_bearing(&self) -> bool {
        self.kind == AgentKind::ProblemSolver && self.solver_index == Some(0)
    }

    /// True for critiquing solvers (roster index above 0).
    pub fn is_critic(&self) -> bool {
        self.kind == AgentKind::ProblemSolver && self.solver_index.map_or(false, |i| i > 0)
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.kind == AgentKind::ProblemSolver {
            if self.solver_index.is_none() || self.role_description.is_none() {
                return Err(DomainError::MissingSolverFields);
            }
        } else if self.solver_index.is_some() || self.role_description.is_some() {
            return Err(DomainError::UnexpectedSolverFields(self.kind));
        }
        Ok(())
    }
}

/// One recorded agent invocation: the exact prompt sent, the raw response,
/// and the token accounting. Ordinals are 0-based, strictly increasing, and
/// gap-free within a trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptTurn {
    pub ordinal: u32,
    pub agent: AgentRole,
    pub prompt: Vec<ChatMessage>,
    pub response: String,
    pub tokens_in: u64,
    pub tokens_out: u64,
    pub budget: u32,
}

/// A full collaborative run over one question, with the validation flags
/// filled in by the data pipeline (`answer_correct` stays `None` until the
/// trace is graded against ground truth).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceSample {
    pub question: Question,
    pub turns: Vec<TranscriptTurn>,
    pub final_answer: Option<String>,
    pub consensus_reached: bool,
    pub format_ok: bool,
    pub answer_correct: Option<bool>,
    pub valid: bool,
}

/// Run-shape configuration for the orchestrator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Problem solvers recruited per round: one drafter plus critics.
    pub total_agents: u32,
    /// Maximum critique/revision iterations inside a round.
    pub critic_iterations: u32,
    /// Maximum rounds (recruit, solve, evaluate) per question.
    pub total_iterations: u32,
    /// Budget used for every call unless a CEO directive overrides it.
    pub default_max_tokens: u32,
    /// Menu the CEO chooses budgets from.
    pub token_budget_menu: Vec<u32>,
    /// Inclusive bounds on CEO recruit numbers.
    pub recruit_bounds: (u32, u32),
    /// Whether the CEO control loop is active.
    pub ceo_enabled: bool,
    /// Transport retry budget for remote backends.
    pub retry_limit: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_agents: 5,
            critic_iterations: 3,
            total_iterations: 2,
            default_max_tokens: 32000,
            token_budget_menu: DEFAULT_TOKEN_BUDGET_MENU.to_vec(),
            recruit_bounds: DEFAULT_RECRUIT_BOUNDS,
            ceo_enabled: false,
            retry_limit: 3,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.total_agents < 2 {
            return Err(DomainError::TooFewAgents(self.total_agents));
        }
        if self.critic_iterations == 0 {
            return Err(DomainError::ZeroField("critic_iterations"));
        }
        if self.total_iterations == 0 {
            return Err(DomainError::ZeroField("total_iterations"));
        }
        if self.default_max_tokens == 0 {
            return Err(DomainError::ZeroField("default_max_tokens"));
        }
        if self.token_budget_menu.is_empty() {
            return Err(DomainError::EmptyBudgetMenu);
        }
        let (lo, hi) = self.recruit_bounds;
        if lo == 0 || lo > hi {
            return Err(DomainError::BadRecruitBounds(lo, hi));
        }
        Ok(())
    }
}

/// CEO decision head: keep iterating or stop here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CeoDecision {
    Continue,
    Stop,
}

/// A parsed CEO directive controlling the next round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CeoDirective {
    pub decision: CeoDecision,
    pub recruit_number: u32,
    pub direction: String,
    pub max_tokens: u32,
}

impl CeoDirective {
    /// Checks the directive against the recruit bounds and the budget menu.
    /// `0` fails even though it appears on the menu: a zero budget would
    /// silence every agent in the next round.
    pub fn validate(&self, menu: &[u32], bounds: (u32, u32)) -> Result<(), DomainError> {
        let (lo, hi) = bounds;
        if self.recruit_number < lo || self.recruit_number > hi {
            return Err(DomainError::RecruitOutOfBounds { got: self.recruit_number, lo, hi });
        }
        if self.max_tokens == 0 || !menu.contains(&self.max_tokens) {
            return Err(DomainError::BudgetOffMenu(self.max_tokens));
        }
        Ok(())
    }
}

/// A parsed evaluator verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatorVerdict {
    /// 0 (wrong) or 1 (correct).
    pub correctness: u8,
    pub confidence: Option<f64>,
    pub advice: String,
}

impl EvaluatorVerdict {
    pub fn validate(&self) -> Result<(), DomainError> {
        if self.correctness > 1 {
            return Err(DomainError::BadCorrectness(self.correctness));
        }
        if self.correctness == 0 && self.advice.trim().is_empty() {
            return Err(DomainError::MissingAdvice);
        }
        Ok(())
    }
}

/// Outcome of scanning one critic response for its trailing token.
/// `Missing` marks a format violation and is never treated as agreement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsensusMark {
    Agree,
    Disagree,
    Missing,
}

/// Terminal state of a solve run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// The evaluator accepted a solution (correctness 1).
    Solved,
    /// Rounds ran out, or the CEO stopped on an unaccepted solution.
    Exhausted,
    /// The run could not proceed (backend failure or an unrecoverable
    /// recruiter parse failure).
    Aborted,
}

/// Result of one orchestrated run. `notes` records re-asks, directive
/// clamps, fallbacks, and abort causes; it is diagnostic, not part of the
/// exported trace format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub final_answer: Option<String>,
    pub trace: TraceSample,
    pub iterations_used: u32,
    pub total_tokens: u64,
    pub notes: Vec<String>,
}

/// Snapshot of spend and capacity handed to the CEO each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub round_index: u32,
    pub rounds_max: u32,
    pub tokens_spent: u64,
    pub solver_count: u32,
    pub current_budget: u32,
}

impl ResourceLedger {
    /// Fixed one-line rendering used as the `${current_resources}` binding.
    pub fn summary(&self) -> String {
        format!(
            "round {} of {}; solvers {}; tokens spent {}; current budget {}",
            self.round_index, self.rounds_max, self.solver_count, self.tokens_spent, self.current_budget
        )
    }
}
