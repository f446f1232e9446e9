//! Prompt template catalog and `${var}` substitution.
//!
//! Each protocol role has a fixed system/user template pair. Bodies are kept
//! verbatim, quirks included: the recruiter variable is named
//! `cnt_critic_agents` even though it denotes the total number of experts to
//! recruit, and the recruiter user prompt says "recruit N expert in different
//! fields". Substitution is literal and single-pass; binding values are never
//! re-scanned for placeholders.
//!
//! Alternate task families (writing, coding) can swap bodies via override
//! files: a one-line header naming the template id, then the body verbatim.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ChatMessage;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template} requires variable ${{{name}}} which is not bound")]
    MissingVariable { template: TemplateId, name: String },
    #[error("binding {name} does not appear in the rendered templates")]
    UnknownVariable { name: String },
    #[error("unknown template id {0:?}")]
    UnknownTemplate(String),
    #[error("override file is empty")]
    EmptyOverride,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Identifier for one template body. System/user variants pair up into the
/// five prompt roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TemplateId {
    CeoSystem,
    CeoUser,
    RecruiterSystem,
    RecruiterUser,
    SolverDraftSystem,
    SolverDraftUser,
    SolverCriticSystem,
    SolverCriticUser,
    EvaluatorSystem,
    EvaluatorUser,
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::CeoSystem,
        TemplateId::CeoUser,
        TemplateId::RecruiterSystem,
        TemplateId::RecruiterUser,
        TemplateId::SolverDraftSystem,
        TemplateId::SolverDraftUser,
        TemplateId::SolverCriticSystem,
        TemplateId::SolverCriticUser,
        TemplateId::EvaluatorSystem,
        TemplateId::EvaluatorUser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::CeoSystem => "CeoSystem",
            TemplateId::CeoUser => "CeoUser",
            TemplateId::RecruiterSystem => "RecruiterSystem",
            TemplateId::RecruiterUser => "RecruiterUser",
            TemplateId::SolverDraftSystem => "SolverDraftSystem",
            TemplateId::SolverDraftUser => "SolverDraftUser",
            TemplateId::SolverCriticSystem => "SolverCriticSystem",
            TemplateId::SolverCriticUser => "SolverCriticUser",
            TemplateId::EvaluatorSystem => "EvaluatorSystem",
            TemplateId::EvaluatorUser => "EvaluatorUser",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == name)
    }

    pub fn role(self) -> PromptRole {
        match self {
            TemplateId::CeoSystem | TemplateId::CeoUser => PromptRole::Ceo,
            TemplateId::RecruiterSystem | TemplateId::RecruiterUser => PromptRole::Recruiter,
            TemplateId::SolverDraftSystem | TemplateId::SolverDraftUser => PromptRole::SolverDraft,
            TemplateId::SolverCriticSystem | TemplateId::SolverCriticUser => PromptRole::SolverCritic,
            TemplateId::EvaluatorSystem | TemplateId::EvaluatorUser => PromptRole::Evaluator,
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One of the five prompt roles, each rendering to `[system, user]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptRole {
    Ceo,
    Recruiter,
    SolverDraft,
    SolverCritic,
    Evaluator,
}

impl PromptRole {
    pub fn system_id(self) -> TemplateId {
        match self {
            PromptRole::Ceo => TemplateId::CeoSystem,
            PromptRole::Recruiter => TemplateId::RecruiterSystem,
            PromptRole::SolverDraft => TemplateId::SolverDraftSystem,
            PromptRole::SolverCritic => TemplateId::SolverCriticSystem,
            PromptRole::Evaluator => TemplateId::EvaluatorSystem,
        }
    }

    pub fn user_id(self) -> TemplateId {
        match self {
            PromptRole::Ceo => TemplateId::CeoUser,
            PromptRole::Recruiter => TemplateId::RecruiterUser,
            PromptRole::SolverDraft => TemplateId::SolverDraftUser,
            PromptRole::SolverCritic => TemplateId::SolverCriticUser,
            PromptRole::Evaluator => TemplateId::EvaluatorUser,
        }
    }
}

const CEO_SYSTEM: &str = "\
You are the CEO of a collaborative problem-solving system. Your responsibilities include:
1. Monitoring solution progress and resource allocation
2. Making strategic decisions about continuation/termination
3. Managing expert recruitment and retention
4. Directing discussion focus areas when the solution is not correct
5. Adjusting reasoning depth through token budgets

Previous system state:
- Task: ${task_description}
- Latest solution: ${current_solution}
- Evaluation feedback: ${evaluation_feedback}
- Current resources: ${current_resources}";

const CEO_USER: &str = "\
Now, you need to decide the system state for this round. Carefully consider the following:
- Choose <Stop> only if solution is correct
- Recruit experts based on skill gaps identified in evaluation and do not recruit more than 4 experts, typically only 2-3 agents are needed for ordinary tasks and 4 agents are needed for complex tasks
- Direct discussion to address weakest solution aspects
- Set token budget proportional to the task complexity, token usages should choose from [0, 2048, 4096, 8192, 16384, 32000], typically 2048 tokens for simple tasks, 8192 tokens for tasks require medium reasoning, and 16384 or more tokens for complex reasoning tasks

Your response must strictly follow this structure:
### Decision: <Continue> or <Stop>
### Recruit Number: Number of experts to recruit in this round, should be an integer between 1 and 4
### Direction: Discussion direction based on the task description, latest solution, critic opinions, and evaluation feedback
### Maximum Tokens: Maximum tokens for each agent in this round, should be an integer between 2048 and 32000";

const RECRUITER_SYSTEM: &str = "\
# Role Description
You are the leader of a group of experts, now you are facing a math problem:
${task_description}

# Primary Objective
Your sole responsibility is to recruit ${cnt_critic_agents} experts in different specialized fields to solve the math problem.
- DO NOT attempt to solve the problem yourself
- DO NOT propose any solutions or calculations

# Recruitment Focus
Your selection should be based on:
1. Identifying which expertise domains are relevant to this math problem type
2. Considering complementary skill sets that could collaborate effectively
3. Ensuring coverage of all potential aspects needed for solution

Here are some suggestions:
${advice}

# Prohibited Actions
- Any mathematical reasoning or problem-solving attempts
- Speculation about potential solutions";

const RECRUITER_USER: &str = "\
You can recruit ${cnt_critic_agents} expert in different fields. What experts will you recruit to better generate an accurate solution?

# Strict Instructions
You must ONLY recruit ${cnt_critic_agents} experts in distinct fields relevant to the math problem type.
- DO NOT suggest solution approaches
- DO NOT compare potential methodologies

# Response Requirements
1. List ${cnt_critic_agents} expert roles with their specialization
2. Each entry must specify:
   - Professional discipline (e.g., computer scientist, mathematician)
   - Primary specialization field
   - Specific technical expertise within that field
3. Ensure complementary but non-overlapping domains

# Response Format Guidance
Your response must follow this exact structure:
1. A [discipline] specialized in [primary field], with expertise in [specific technical area]
2. A [different discipline] with expertise in [related field], particularly in [technical specialization]

Only provide the numbered list of expert descriptions and nothing more. Begin now:";

const SOLVER_DRAFT_SYSTEM: &str = "\
Solve the following math problem accurately:
${task_description}

You have all the necessary information to solve this math problem. Do not request additional details.";

const SOLVER_DRAFT_USER: &str = "\
You are ${role_description}. Based on the chat history and your knowledge, provide a precise and well-explained solution to the math problem.
Here is some thinking direction: ${advice}

# Response Format Guidance:
- Your final answer must directly address the math problem.
- Format your final answer as \\boxed{answer} at the end of your response for easy evaluation.";

const SOLVER_CRITIC_SYSTEM: &str = "\
You are ${role_description}. You are in a discussion group, aiming to collaborative solve the following math problem:
${task_description}

Based on your knowledge, give your critics to a solution of the math problem.";

const SOLVER_CRITIC_USER: &str = "\
Now compare your solution with the last solution given in the chat history and give your critics. The final answer is highlighted in the form \\boxed{answer}.
Here is some thinking direction: ${advice}
When responding, you should follow the following rules:
1. This math problem can be answered without any extra information. You should not ask for any extra information.
2. Compare your solution with the given last solution, give your critics. You should only give your critics, don't give your answer.
3. If the final answer of your solution is the same as the final answer in the provided last solution, end your response with a special token \"[Agree]\", otherwise end your response with a special token \"[Disagree]\".";

const EVALUATOR_SYSTEM: &str = "\
Experts: ${all_role_description}
Problem: ${task_description}
Solution:
${solution}";

const EVALUATOR_USER: &str = "\
You are an experienced math teacher. As a good teacher, you carefully check the correctness of the given last solution on a complex math problem. When the last solution is wrong, you should output a correctness of 0 and give your advice to the students on how to correct the solution. When it is correct, output a correctness of 1 and why it is correct. Also check that the final answer is in the form \\boxed{answer} at the end of the solution. You should also give your confidence score for the correctness of the solution.

You should respond in the following format:
### Correctness: (0 or 1, 0 is wrong, and 1 is correct)
### Confidence: (confidence score for the correctness of the solution)
### Advice: (advice to correct the answer or why it is correct)";

fn builtin_body(id: TemplateId) -> &'static str {
    match id {
        TemplateId::CeoSystem => CEO_SYSTEM,
        TemplateId::CeoUser => CEO_USER,
        TemplateId::RecruiterSystem => RECRUITER_SYSTEM,
        TemplateId::RecruiterUser => RECRUITER_USER,
        TemplateId::SolverDraftSystem => SOLVER_DRAFT_SYSTEM,
        TemplateId::SolverDraftUser => SOLVER_DRAFT_USER,
        TemplateId::SolverCriticSystem => SOLVER_CRITIC_SYSTEM,
        TemplateId::SolverCriticUser => SOLVER_CRITIC_USER,
        TemplateId::EvaluatorSystem => EVALUATOR_SYSTEM,
        TemplateId::EvaluatorUser => EVALUATOR_USER,
    }
}

static PLACEHOLDER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\{([A-Za-z0-9_]+)\}").expect("placeholder regex"));

/// The template catalog: builtin bodies, optionally overridden per id.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    bodies: BTreeMap<TemplateId, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let bodies = TemplateId::ALL
            .into_iter()
            .map(|id| (id, builtin_body(id).to_string()))
            .collect();
        Self { bodies }
    }

    pub fn body(&self, id: TemplateId) -> &str {
        &self.bodies[&id]
    }

    pub fn set_body(&mut self, id: TemplateId, body: impl Into<String>) {
        self.bodies.insert(id, body.into());
    }

    /// Loads one override file: first line is the template id, the remainder
    /// is the body verbatim. Returns which template was replaced.
    pub fn load_override(&mut self, path: &Path) -> Result<TemplateId, PromptError> {
        let text = std::fs::read_to_string(path)?;
        self.load_override_str(&text)
    }

    pub fn load_override_str(&mut self, text: &str) -> Result<TemplateId, PromptError> {
        let mut lines = text.splitn(2, '\n');
        let header = lines.next().ok_or(PromptError::EmptyOverride)?.trim();
        if header.is_empty() {
            return Err(PromptError::EmptyOverride);
        }
        let id = TemplateId::from_name(header)
            .ok_or_else(|| PromptError::UnknownTemplate(header.to_string()))?;
        let body = lines.next().unwrap_or("").to_string();
        self.bodies.insert(id, body);
        Ok(id)
    }

    /// Variables a template body references, in order of first appearance
    /// (deduplicated).
    pub fn required_vars(&self, id: TemplateId) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut vars = Vec::new();
        for cap in PLACEHOLDER.captures_iter(self.body(id)) {
            let name = cap[1].to_string();
            if seen.insert(name.clone()) {
                vars.push(name);
            }
        }
        vars
    }

    /// Every template id with its required variables.
    pub fn catalog(&self) -> Vec<(TemplateId, Vec<String>)> {
        TemplateId::ALL.into_iter().map(|id| (id, self.required_vars(id))).collect()
    }

    /// Renders the role pair a template id belongs to, producing exactly
    /// `[system message, user message]`. Bindings must cover the union of
    /// both templates' variables; bindings that match no placeholder are
    /// rejected rather than silently dropped.
    pub fn render(
        &self,
        id: TemplateId,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        self.render_role(id.role(), bindings)
    }

    pub fn render_role(
        &self,
        role: PromptRole,
        bindings: &BTreeMap<String, String>,
    ) -> Result<Vec<ChatMessage>, PromptError> {
        let system_id = role.system_id();
        let user_id = role.user_id();
        let mut used: BTreeSet<&str> = BTreeSet::new();
        let system = self.substitute(system_id, bindings, &mut used)?;
        let user = self.substitute(user_id, bindings, &mut used)?;
        if let Some(unused) = bindings.keys().find(|k| !used.contains(k.as_str())) {
            return Err(PromptError::UnknownVariable { name: unused.clone() });
        }
        Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
    }

    /// Single-pass substitution: placeholders in `body` are replaced with
    /// binding values; the values themselves are inserted literally.
    fn substitute<'b>(
        &self,
        id: TemplateId,
        bindings: &'b BTreeMap<String, String>,
        used: &mut BTreeSet<&'b str>,
    ) -> Result<String, PromptError> {
        let body = self.body(id);
        let mut out = String::with_capacity(body.len());
        let mut last = 0;
        for cap in PLACEHOLDER.captures_iter(body) {
            let whole = cap.get(0).expect("capture 0");
            let name = cap.get(1).expect("capture 1").as_str();
            let (key, value) = bindings
                .get_key_value(name)
                .ok_or_else(|| PromptError::MissingVariable { template: id, name: name.to_string() })?;
            used.insert(key.as_str());
            out.push_str(&body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&body[last..]);
        Ok(out)
    }
}
