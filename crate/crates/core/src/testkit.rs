//! Deterministic in-memory backends shared by unit tests, integration tests,
//! and examples. Nothing here talks to a network.
//!
//! [`StaticBackend`] answers by tag-suffix rules and is the workhorse for
//! protocol tests. [`ScriptBuilder`] assembles fixture scripts without
//! hand-numbering indices. [`StochasticMock`] simulates a solver whose
//! success rate grows with its token budget — the knob the scaling studies
//! turn — while staying bit-for-bit reproducible: every draw is seeded from
//! `(seed, tag, per-tag call count)`, so concurrent questions can interleave
//! calls in any order without perturbing each other's streams.

use std::collections::HashMap;
use std::sync::{LazyLock, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::backend::scripted::{FixtureEntry, ScriptedBackend};
use crate::backend::{
    count_tokens, AuditEntry, AuditLog, BackendError, ChatBackend, ChatRequest, ChatResponse,
    FinishReason,
};
use crate::domain::MessageRole;
use crate::parsing::extract_boxed;

/// A well-formed roster of `n` distinct expert descriptions.
pub fn roster(n: u32) -> String {
    (1..=n)
        .map(|i| {
            format!("{i}. A mathematician specialized in field {i}, with expertise in area {i}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

static RECRUIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"recruit (\d+) expert").expect("recruit regex"));

/// Reads the requested expert count out of a recruiter prompt ("You can
/// recruit N expert in different fields"). Defaults to 1 when absent so
/// mock rosters are never empty.
pub fn recruit_count(request: &ChatRequest) -> u32 {
    request
        .messages
        .iter()
        .find_map(|m| RECRUIT_RE.captures(&m.content).and_then(|c| c[1].parse().ok()))
        .unwrap_or(1)
}

fn tag_matches(tag: &str, suffix: &str) -> bool {
    tag == suffix || tag.strip_suffix(suffix).is_some_and(|head| head.ends_with('/'))
}

fn finish_for(tokens_out: u64, max_tokens: u32) -> FinishReason {
    if tokens_out >= u64::from(max_tokens) {
        FinishReason::LengthCapped
    } else {
        FinishReason::Stop
    }
}

type Responder = Box<dyn Fn(&ChatRequest) -> String + Send + Sync>;

/// Rule-based backend: the first rule whose suffix matches the request tag
/// (exactly, or as the segment after a `/` scope) produces the response.
#[derive(Default)]
pub struct StaticBackend {
    rules: Vec<(String, Responder)>,
    audit: AuditLog,
}

impl StaticBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(
        mut self,
        suffix: &str,
        respond: impl Fn(&ChatRequest) -> String + Send + Sync + 'static,
    ) -> Self {
        self.rules.push((suffix.to_string(), Box::new(respond)));
        self
    }
}

impl ChatBackend for StaticBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let (_, respond) = self
            .rules
            .iter()
            .find(|(suffix, _)| tag_matches(&request.tag, suffix))
            .ok_or_else(|| BackendError::Protocol(format!("no rule for tag {:?}", request.tag)))?;
        let content = respond(request);
        let tokens_out = count_tokens(&content);
        self.audit.record(AuditEntry {
            tag: request.tag.clone(),
            max_tokens: request.max_tokens,
            tokens_out,
        });
        Ok(ChatResponse { content, tokens_out, finish: finish_for(tokens_out, request.max_tokens) })
    }

    fn audit_len(&self) -> usize {
        self.audit.len()
    }

    fn audit(&self) -> Vec<AuditEntry> {
        self.audit.snapshot()
    }
}

/// Builds fixture scripts with auto-assigned per-tag indices.
#[derive(Default)]
pub struct ScriptBuilder {
    entries: Vec<FixtureEntry>,
    next_index: HashMap<String, u32>,
}

impl ScriptBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, tag: &str, content: &str) -> &mut Self {
        self.push_entry(tag, content, None)
    }

    /// Pins `tokens_out` instead of letting the backend count words.
    pub fn push_with_tokens(&mut self, tag: &str, content: &str, tokens_out: u64) -> &mut Self {
        self.push_entry(tag, content, Some(tokens_out))
    }

    fn push_entry(&mut self, tag: &str, content: &str, tokens_out: Option<u64>) -> &mut Self {
        let index = self.next_index.entry(tag.to_string()).or_insert(0);
        self.entries.push(FixtureEntry {
            tag: tag.to_string(),
            index: *index,
            content: content.to_string(),
            tokens_out,
        });
        *index += 1;
        self
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.entries.clone()
    }

    pub fn backend(&self) -> ScriptedBackend {
        ScriptedBackend::from_entries(self.entries.clone())
    }

    /// The script as the line-delimited JSON the CLI's `--script` flag reads.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("fixture entry serializes"))
            .fold(String::new(), |mut acc, line| {
                acc.push_str(&line);
                acc.push('\n');
                acc
            })
    }
}

fn fnv(mut hash: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// FNV-1a over `(seed, tag, counter)`. Hand-rolled rather than borrowed from
/// the standard library because `DefaultHasher` doesn't promise stable output
/// across releases, and these seeds end up in golden expectations.
fn mix(seed: u64, tag: &str, counter: u64) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325;
    hash = fnv(hash, &seed.to_le_bytes());
    hash = fnv(hash, tag.as_bytes());
    hash = fnv(hash, &counter.to_le_bytes());
    hash
}

/// A full cast of role mocks around one tunable behavior: drafts and
/// revisions state the right answer with a probability that rises with the
/// request budget. Critics and the evaluator are oracles — critics agree
/// exactly when the latest drafted answer is right (read from the chat
/// history in their prompt), the evaluator passes exactly when the submitted
/// solution is right — so a run solves precisely when some draft or revision
/// lands the true answer.
pub struct StochasticMock {
    seed: u64,
    answer: String,
    counters: Mutex<HashMap<String, u64>>,
    audit: AuditLog,
}

impl StochasticMock {
    pub fn new(seed: u64, answer: impl Into<String>) -> Self {
        Self {
            seed,
            answer: answer.into(),
            counters: Mutex::new(HashMap::new()),
            audit: AuditLog::default(),
        }
    }

    /// Chance that one draft or revision is correct under `budget`.
    pub fn success_probability(budget: u32) -> f64 {
        match budget {
            0..=2048 => 0.25,
            2049..=4096 => 0.40,
            4097..=8192 => 0.55,
            8193..=16384 => 0.70,
            _ => 0.85,
        }
    }

    fn draw(&self, tag: &str, probability: f64) -> bool {
        let count = {
            let mut counters = self.counters.lock().expect("counter lock");
            let slot = counters.entry(tag.to_string()).or_insert(0);
            let current = *slot;
            *slot += 1;
            current
        };
        ChaCha8Rng::seed_from_u64(mix(self.seed, tag, count)).gen_bool(probability)
    }

    fn respond(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let suffix = request.tag.rsplit('/').next().unwrap_or(request.tag.as_str());
        let text = match suffix {
            "recruiter" => {
                format!("<think>assembling the bench</think>\n{}", roster(recruit_count(request)))
            }
            "solver-draft" | "solver-revision" => {
                let p = Self::success_probability(request.max_tokens);
                let answer = if self.draw(&request.tag, p) {
                    self.answer.clone()
                } else {
                    format!("{}9", self.answer)
                };
                format!(
                    "<think>working within {} tokens</think> After careful analysis, \
                     the result is \\boxed{{{answer}}}",
                    request.max_tokens
                )
            }
            "solver-critic" => {
                // The latest drafted answer sits in the history block of the
                // critic's prompt; text after </history> is template guidance
                // (it mentions \boxed{answer} literally) and must not count.
                let agree = request
                    .messages
                    .iter()
                    .rev()
                    .find(|m| m.role == MessageRole::User)
                    .and_then(|m| m.content.split("</history>").next())
                    .and_then(|history| extract_boxed(history).ok())
                    .is_some_and(|drafted| drafted == self.answer);
                let token = if agree { "[Agree]" } else { "[Disagree]" };
                format!("<think>cross-checking</think> I compared the final answers. {token}")
            }
            "evaluator" => {
                // The submitted solution is the tail of the system message.
                let correct = request
                    .messages
                    .iter()
                    .find(|m| m.role == MessageRole::System)
                    .and_then(|m| extract_boxed(&m.content).ok())
                    .is_some_and(|submitted| submitted == self.answer);
                if correct {
                    "<think>checking</think> ### Correctness: 1\n### Confidence: 0.9\n\
                     ### Advice: the boxed result checks out"
                        .to_string()
                } else {
                    "<think>checking</think> ### Correctness: 0\n### Confidence: 0.8\n\
                     ### Advice: rework the computation and restate the boxed answer"
                        .to_string()
                }
            }
            "ceo" => format!(
                "<think>steering</think> ### Decision: <Continue>\n### Recruit Number: 2\n\
                 ### Direction: tighten the reasoning and restate the boxed answer\n\
                 ### Maximum Tokens: {}",
                request.max_tokens
            ),
            "judge" => "<think>weighing the fields involved</think> Yes, several specialties \
                        apply."
                .to_string(),
            "probe" => format!("<think>long exploration</think> {}", "step ".repeat(1200)),
            other => {
                return Err(BackendError::Protocol(format!("no mock behavior for tag {other:?}")))
            }
        };
        Ok(text)
    }
}

impl ChatBackend for StochasticMock {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let content = self.respond(request)?;
        let tokens_out = count_tokens(&content);
        self.audit.record(AuditEntry {
            tag: request.tag.clone(),
            max_tokens: request.max_tokens,
            tokens_out,
        });
        Ok(ChatResponse { content, tokens_out, finish: finish_for(tokens_out, request.max_tokens) })
    }

    fn audit_len(&self) -> usize {
        self.audit.len()
    }

    fn audit(&self) -> Vec<AuditEntry> {
        self.audit.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ChatMessage;
    use crate::parsing::parse_roster;

    fn request(tag: &str, max_tokens: u32, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest { messages, max_tokens, temperature: 0.0, model_id: "default".into(), tag: tag.into() }
    }

    fn draft(tag: &str, max_tokens: u32) -> ChatRequest {
        request(tag, max_tokens, vec![ChatMessage::user("solve it")])
    }

    #[test]
    fn roster_parses_and_recruit_count_reads_prompts() {
        let text = roster(3);
        assert_eq!(parse_roster(&text, 3).unwrap().len(), 3);
        let req = request(
            "recruiter",
            100,
            vec![ChatMessage::user("You can recruit 3 expert in different fields.")],
        );
        assert_eq!(recruit_count(&req), 3);
        assert_eq!(recruit_count(&draft("recruiter", 100)), 1, "defaults to one");
    }

    #[test]
    fn static_backend_matches_suffixes_and_audits() {
        let backend = StaticBackend::new().rule("evaluator", |req| format!("tag was {}", req.tag));
        let scoped = backend.complete(&draft("q9/evaluator", 50)).unwrap();
        assert_eq!(scoped.content, "tag was q9/evaluator");
        assert!(backend.complete(&draft("q9/recruiter", 50)).is_err(), "no rule, no answer");
        // Suffix matching respects segment boundaries.
        assert!(backend.complete(&draft("fooevaluator", 50)).is_err());
        assert_eq!(backend.audit_len(), 1);
    }

    #[test]
    fn script_builder_numbers_per_tag() {
        let mut builder = ScriptBuilder::new();
        builder.push("evaluator", "first").push("recruiter", "r").push("evaluator", "second");
        builder.push_with_tokens("solver-draft", "text", 5695);
        let entries = builder.entries();
        assert_eq!(entries[0].index, 0);
        assert_eq!(entries[2].index, 1, "indices count per tag");
        assert_eq!(entries[3].tokens_out, Some(5695));

        let backend = builder.backend();
        assert_eq!(backend.complete(&draft("evaluator", 100)).unwrap().content, "first");
        assert_eq!(backend.complete(&draft("evaluator", 100)).unwrap().content, "second");

        let jsonl = builder.to_jsonl();
        assert_eq!(jsonl.lines().count(), 4);
        assert!(jsonl.ends_with('\n'));
        // The builder's output round-trips through the script parser.
        let reparsed = crate::backend::scripted::parse_script(&jsonl).unwrap();
        assert_eq!(reparsed.len(), 4);
    }

    #[test]
    fn probability_steps_follow_the_budget() {
        assert_eq!(StochasticMock::success_probability(1), 0.25);
        assert_eq!(StochasticMock::success_probability(2048), 0.25);
        assert_eq!(StochasticMock::success_probability(2049), 0.40);
        assert_eq!(StochasticMock::success_probability(4096), 0.40);
        assert_eq!(StochasticMock::success_probability(8192), 0.55);
        assert_eq!(StochasticMock::success_probability(16384), 0.70);
        assert_eq!(StochasticMock::success_probability(32000), 0.85);
    }

    fn drafted_answer(mock: &StochasticMock, tag: &str, budget: u32) -> String {
        let response = mock.complete(&draft(tag, budget)).unwrap();
        extract_boxed(&response.content).unwrap()
    }

    #[test]
    fn draws_depend_only_on_seed_tag_and_call_count() {
        let a = StochasticMock::new(42, "7");
        let b = StochasticMock::new(42, "7");
        // a serves q1 and q2 interleaved; b serves q2 first, then q1 twice.
        let a_q1 = vec![
            drafted_answer(&a, "q1/solver-draft", 2048),
            {
                drafted_answer(&a, "q2/solver-draft", 2048);
                drafted_answer(&a, "q1/solver-draft", 2048)
            },
        ];
        drafted_answer(&b, "q2/solver-draft", 2048);
        let b_q1 = vec![
            drafted_answer(&b, "q1/solver-draft", 2048),
            drafted_answer(&b, "q1/solver-draft", 2048),
        ];
        assert_eq!(a_q1, b_q1, "per-tag streams ignore interleaving");

        let other_seed = StochasticMock::new(43, "7");
        let mut diverged = false;
        for i in 0..32 {
            let tag = format!("q{i}/solver-draft");
            if drafted_answer(&StochasticMock::new(42, "7"), &tag, 2048)
                != drafted_answer(&other_seed, &tag, 2048)
            {
                diverged = true;
            }
        }
        assert!(diverged, "different seeds give different draws somewhere");
    }

    #[test]
    fn success_frequency_tracks_the_budget() {
        let mock = StochasticMock::new(7, "7");
        let hits = |budget: u32, salt: &str| {
            (0..400)
                .filter(|i| drafted_answer(&mock, &format!("{salt}{i}/solver-draft", ), budget) == "7")
                .count()
        };
        let low = hits(2048, "lo");
        let high = hits(32000, "hi");
        assert!((60..160).contains(&low), "~25% of 400, got {low}");
        assert!(high > 280, "~85% of 400, got {high}");
    }

    #[test]
    fn critic_oracle_reads_history_not_template_text() {
        let mock = StochasticMock::new(1, "7");
        let prompt = |drafted: &str| {
            request(
                "q1/solver-critic",
                1000,
                vec![ChatMessage::user(format!(
                    "Here is the chat history:\n<history>\n\n[an expert]: the result is \
                     \\boxed{{{drafted}}}\n\n</history>\n\nThe final answer is highlighted in \
                     the form \\boxed{{answer}}."
                ))],
            )
        };
        let agree = mock.complete(&prompt("7")).unwrap();
        assert!(agree.content.ends_with("[Agree]"));
        let disagree = mock.complete(&prompt("8")).unwrap();
        assert!(disagree.content.ends_with("[Disagree]"));
    }

    #[test]
    fn evaluator_oracle_reads_the_submitted_solution() {
        let mock = StochasticMock::new(1, "7");
        let prompt = |submitted: &str| {
            request(
                "q1/evaluator",
                1000,
                vec![
                    ChatMessage::system(format!(
                        "Experts: e\nProblem: p\nSolution:\nthe result is \\boxed{{{submitted}}}"
                    )),
                    ChatMessage::user("check it"),
                ],
            )
        };
        assert!(mock.complete(&prompt("7")).unwrap().content.contains("Correctness: 1"));
        assert!(mock.complete(&prompt("79")).unwrap().content.contains("Correctness: 0"));
    }

    #[test]
    fn judge_and_probe_mocks_satisfy_the_gates() {
        let mock = StochasticMock::new(1, "7");
        let judge = mock.complete(&draft("q1/judge", 1000)).unwrap();
        assert!(judge.content.contains("Yes"));
        let probe = mock.complete(&draft("q1/probe", 32000)).unwrap();
        assert!(count_tokens(&probe.content) >= 1024);
        assert!(mock.complete(&draft("q1/mystery", 1000)).is_err());
    }
}
