//! Benchmark harness: grading functions, a per-question benchmark runner,
//! and one-axis parameter sweeps with a sign-test helper for comparing
//! configurations.
//!
//! Grading is mode-specific. Exact answers are compared as rationals when
//! both sides parse as numbers (`181`, `181.0`, and `\frac{362}{2}` all
//! agree) and as normalized strings otherwise. Open-ended answers are scored
//! by concept coverage, a fraction in `[0, 1]`; `accuracy` is always the
//! mean of per-question scores, so the boolean `correct` flag (score == 1)
//! and the reported accuracy stay consistent across modes.

use num_bigint::BigInt;
use num_rational::BigRational;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

use crate::backend::ChatBackend;
use crate::domain::{Question, RunConfig, SolveOutcome, SolveStatus};
use crate::orchestrator::executor::{extract_code_blocks, ExecutorRunner};
use crate::orchestrator::{Engine, EngineOptions};
use crate::parsing::visible_text;

/// How a benchmark question is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradingMode {
    /// Boxed final answer against `ground_truth`.
    #[default]
    Exact,
    /// Fraction of `concepts` present in the final solution.
    ConceptCoverage,
    /// Code from the final solution must pass every entry in `tests`.
    CodeTests,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchQuestion {
    pub id: String,
    pub statement: String,
    pub task_type: GradingMode,
    pub ground_truth: Option<String>,
    pub concepts: Vec<String>,
    pub tests: Vec<String>,
}

impl Default for BenchQuestion {
    fn default() -> Self {
        Self {
            id: String::new(),
            statement: String::new(),
            task_type: GradingMode::Exact,
            ground_truth: None,
            concepts: Vec::new(),
            tests: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub id: String,
    pub correct: bool,
    pub score: f64,
    pub tokens: u64,
    pub turns: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub mean_turns: f64,
    pub per_question: Vec<BenchRow>,
}

/// Solves every question under `config` and grades the results. Each
/// question runs under its own tag scope, so scripted backends can pin
/// fixtures per question. Aborted runs score zero with an explanatory note
/// rather than failing the whole benchmark.
pub fn run_benchmark(
    questions: &[BenchQuestion],
    config: &RunConfig,
    backend: &dyn ChatBackend,
    runner: &dyn ExecutorRunner,
) -> BenchReport {
    let mut per_question = Vec::with_capacity(questions.len());
    for q in questions {
        let mut question = Question::new(&q.id, &q.statement);
        if let Some(truth) = &q.ground_truth {
            question = question.with_ground_truth(truth);
        }
        let options = EngineOptions { tag_scope: Some(q.id.clone()), ..EngineOptions::default() };
        let outcome =
            Engine::new(config, backend).with_runner(runner).with_options(options).run(&question);
        let (score, note) = score_outcome(q, &outcome, runner);
        per_question.push(BenchRow {
            id: q.id.clone(),
            correct: score == 1.0,
            score,
            tokens: outcome.total_tokens,
            turns: outcome.trace.turns.len() as u64,
            note,
        });
    }
    let accuracy = mean(per_question.iter().map(|r| r.score));
    let mean_tokens = mean(per_question.iter().map(|r| r.tokens as f64));
    let mean_turns = mean(per_question.iter().map(|r| r.turns as f64));
    BenchReport { accuracy, mean_tokens, mean_turns, per_question }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0u64);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn score_outcome(
    q: &BenchQuestion,
    outcome: &SolveOutcome,
    runner: &dyn ExecutorRunner,
) -> (f64, Option<String>) {
    if outcome.status == SolveStatus::Aborted {
        return (0.0, Some(format!("aborted: {}", outcome.notes.join("; "))));
    }
    match q.task_type {
        GradingMode::Exact => match (&outcome.final_answer, &q.ground_truth) {
            (Some(answer), Some(truth)) => {
                (if grade_exact(answer, truth) { 1.0 } else { 0.0 }, None)
            }
            (None, _) => (0.0, Some("no boxed final answer".into())),
            (_, None) => (0.0, Some("question has no ground truth".into())),
        },
        GradingMode::ConceptCoverage => {
            (grade_concept_coverage(&final_solution_text(outcome), &q.concepts), None)
        }
        GradingMode::CodeTests => {
            let text = final_solution_text(outcome);
            match extract_code_blocks(&text).last() {
                None => (0.0, Some("no code block in the final solution".into())),
                Some(program) => {
                    let grade = grade_code(program, &q.tests, runner);
                    let note =
                        if grade.notes.is_empty() { None } else { Some(grade.notes.join("; ")) };
                    (if grade.passed { 1.0 } else { 0.0 }, note)
                }
            }
        }
    }
}

/// Visible text of the last drafted/revised solution in a run.
fn final_solution_text(outcome: &SolveOutcome) -> String {
    outcome
        .trace
        .turns
        .iter()
        .rev()
        .find(|t| t.agent.is_answer_bearing())
        .map(|t| visible_text(&t.response).trim().to_string())
        .unwrap_or_default()
}

static FRACTION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\\[dt]?frac\s*\{\s*(-?\d+)\s*\}\s*\{\s*(-?\d+)\s*\}$").expect("fraction regex")
});
static RATIO: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(-?\d+)\s*/\s*(-?\d+)$").expect("ratio regex"));
static DECIMAL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(-?)(\d+)\.(\d+)$").expect("decimal regex"));
static INTEGER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^-?\d+$").expect("integer regex"));

/// Exact-answer grading. Both sides are trimmed, stripped of enclosing `$`
/// pairs, and whitespace-collapsed; if both then read as rational numbers
/// (integer, decimal, `\frac{a}{b}`, or `a/b`) they are compared as exact
/// rationals, otherwise as case-sensitive strings.
pub fn grade_exact(answer: &str, truth: &str) -> bool {
    let a = normalize_answer(answer);
    let t = normalize_answer(truth);
    if a == t {
        return true;
    }
    matches!((parse_rational(&a), parse_rational(&t)), (Some(x), Some(y)) if x == y)
}

fn normalize_answer(raw: &str) -> String {
    let mut s = raw.trim();
    while s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
        s = s[1..s.len() - 1].trim();
    }
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn parse_rational(s: &str) -> Option<BigRational> {
    let big = |digits: &str| digits.parse::<BigInt>().ok();
    if INTEGER.is_match(s) {
        return Some(BigRational::from_integer(big(s)?));
    }
    if let Some(cap) = DECIMAL.captures(s) {
        let digits = format!("{}{}{}", &cap[1], &cap[2], &cap[3]);
        let denom: BigInt = format!("1{}", "0".repeat(cap[3].len())).parse().ok()?;
        return Some(BigRational::new(big(&digits)?, denom));
    }
    for re in [&*FRACTION, &*RATIO] {
        if let Some(cap) = re.captures(s) {
            let denom = big(&cap[2])?;
            if denom == BigInt::from(0) {
                return None;
            }
            return Some(BigRational::new(big(&cap[1])?, denom));
        }
    }
    None
}

/// Fraction of `concepts` that appear in `text`. Words are lowercased
/// alphanumeric runs; a concept with several words must appear as a
/// consecutive word sequence. Matching tolerates the common suffixes
/// s/es/d/ed/ing on either side, so "dogs" matches "dog" and "walked"
/// matches "walking". An empty concept list scores 1.0: nothing was
/// required, nothing is missing.
pub fn grade_concept_coverage(text: &str, concepts: &[String]) -> f64 {
    if concepts.is_empty() {
        return 1.0;
    }
    let words = split_words(text);
    let hits = concepts.iter().filter(|c| contains_concept(&words, c)).count();
    hits as f64 / concepts.len() as f64
}

fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

fn contains_concept(words: &[String], concept: &str) -> bool {
    let needle = split_words(concept);
    if needle.is_empty() {
        return true;
    }
    if needle.len() > words.len() {
        return false;
    }
    words
        .windows(needle.len())
        .any(|window| window.iter().zip(&needle).all(|(w, n)| words_match(w, n)))
}

fn words_match(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    let forms_a = word_forms(a);
    let forms_b = word_forms(b);
    forms_a.iter().any(|fa| forms_b.iter().any(|fb| fa == fb))
}

/// The word itself plus any stem left by removing one tolerated suffix.
/// Stems shorter than two characters are discarded so "as" cannot match "a".
fn word_forms(word: &str) -> Vec<String> {
    let mut forms = vec![word.to_string()];
    for suffix in ["ing", "es", "ed", "s", "d"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            if stem.len() >= 2 {
                forms.push(stem.to_string());
            }
        }
    }
    forms
}

#[derive(Debug, Clone)]
pub struct CodeGrade {
    pub passed: bool,
    pub notes: Vec<String>,
}

/// Runs `program` followed by each test through the runner; every combined
/// source must exit cleanly. Timeouts and failures mark the grade failed
/// and are recorded as notes.
pub fn grade_code(program: &str, tests: &[String], runner: &dyn ExecutorRunner) -> CodeGrade {
    if tests.is_empty() {
        return CodeGrade { passed: true, notes: vec!["no tests supplied".into()] };
    }
    let mut notes = Vec::new();
    let mut passed = true;
    for (index, test) in tests.iter().enumerate() {
        let source = format!("{program}\n{test}");
        if let Err(e) = runner.run_source(&source) {
            passed = false;
            notes.push(format!("test {index}: {e}"));
        }
    }
    CodeGrade { passed, notes }
}

/// The run parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TotalIterations,
    CriticIterations,
    TotalAgents,
    MaxTokens,
}

impl SweepAxis {
    pub fn apply(self, base: &RunConfig, value: u32) -> RunConfig {
        let mut config = base.clone();
        match self {
            SweepAxis::TotalIterations => config.total_iterations = value,
            SweepAxis::CriticIterations => config.critic_iterations = value,
            SweepAxis::TotalAgents => config.total_agents = value,
            SweepAxis::MaxTokens => config.default_max_tokens = value,
        }
        config
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::TotalIterations => "total_iterations",
            SweepAxis::CriticIterations => "critic_iterations",
            SweepAxis::TotalAgents => "total_agents",
            SweepAxis::MaxTokens => "max_tokens",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: u32,
    pub accuracy: f64,
    pub mean_tokens: f64,
    pub mean_turns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Benchmarks every value along one axis. `make_backend` supplies a fresh
/// backend per cell so scripted fixtures are not drained across cells. A
/// value that yields an invalid configuration becomes a zero-accuracy row
/// with a note instead of aborting the sweep.
pub fn sweep(
    axis: SweepAxis,
    values: &[u32],
    base: &RunConfig,
    questions: &[BenchQuestion],
    runner: &dyn ExecutorRunner,
    mut make_backend: impl FnMut(&RunConfig) -> Box<dyn ChatBackend>,
) -> Vec<SweepRow> {
    values
        .iter()
        .map(|&value| {
            let config = axis.apply(base, value);
            if let Err(e) = config.validate() {
                return SweepRow {
                    value,
                    accuracy: 0.0,
                    mean_tokens: 0.0,
                    mean_turns: 0.0,
                    note: Some(format!("skipped: {e}")),
                };
            }
            let backend = make_backend(&config);
            let report = run_benchmark(questions, &config, backend.as_ref(), runner);
            SweepRow {
                value,
                accuracy: report.accuracy,
                mean_tokens: report.mean_tokens,
                mean_turns: report.mean_turns,
                note: None,
            }
        })
        .collect()
}

/// Flat CSV rendering of sweep rows: a header plus one line per value.
/// Notes stay in the structured report; the CSV is for plotting.
pub fn write_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,accuracy,mean_tokens,mean_turns\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.value, row.accuracy, row.mean_tokens, row.mean_turns
        ));
    }
    out
}

/// One-sided sign test: the probability of seeing at least `wins` successes
/// in `wins + losses` fair coin flips. Small values reject "the two
/// configurations are equally good" in favor of the winning side.
pub fn sign_test_p(wins: u64, losses: u64) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    // Walk P[X = k] up from k = 0 via the binomial recurrence, summing the
    // tail k >= wins.
    let mut p_k = 0.5f64.powi(n.min(i32::MAX as u64) as i32);
    let mut tail = 0.0;
    for k in 0..=n {
        if k >= wins {
            tail += p_k;
        }
        if k < n {
            p_k = p_k * (n - k) as f64 / (k + 1) as f64;
        }
    }
    tail.min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::executor::{CommandRunner, Passthrough};
    use crate::testkit::{recruit_count, roster, StaticBackend};
    use std::time::Duration;

    #[test]
    fn exact_grading_compares_rationals() {
        assert!(grade_exact("181", "181"));
        assert!(grade_exact("181.0", "181"));
        assert!(grade_exact("\\frac{362}{2}", "181"));
        assert!(grade_exact("\\dfrac{362}{2}", "181"));
        assert!(grade_exact("362/2", "181"));
        assert!(grade_exact("$181$", "181"));
        assert!(grade_exact("  181 ", "181"));
        assert!(grade_exact("-0.5", "-1/2"));
        assert!(!grade_exact("182", "181"));
        assert!(!grade_exact("181.5", "181"));
    }

    #[test]
    fn exact_grading_falls_back_to_normalized_strings() {
        assert!(grade_exact("x + 1", "x  +  1"), "whitespace collapses");
        assert!(!grade_exact("X+1", "x+1"), "string comparison is case-sensitive");
        assert!(grade_exact("\\frac{1}{0}", "\\frac{1}{0}"), "equal strings, even if not a number");
        assert!(!grade_exact("\\frac{1}{0}", "\\frac{2}{0}"), "zero denominators never compare equal");
        assert!(!grade_exact("abc", "181"));
    }

    #[test]
    fn concept_coverage_counts_fractions() {
        let concepts: Vec<String> = (0..20).map(|i| format!("concept{i}")).collect();
        let text = concepts[..15].join(" and then ");
        assert_eq!(grade_concept_coverage(&text, &concepts), 0.75);
        assert_eq!(grade_concept_coverage("anything", &[]), 1.0);
    }

    #[test]
    fn concept_matching_tolerates_suffixes_and_spans_words() {
        let concepts = vec!["dog".to_string(), "power of a point".to_string(), "walking".to_string()];
        let text = "The dogs walked past; by the power of a point argument we conclude.";
        assert_eq!(grade_concept_coverage(text, &concepts), 1.0);
        let partial = "Dogs everywhere, but no geometry.";
        assert!((grade_concept_coverage(partial, &concepts) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(grade_concept_coverage("a dot product", &["dog".to_string()]), 0.0);
    }

    #[test]
    fn code_grading_requires_every_test_to_pass() {
        let runner = CommandRunner::new(vec!["sh".into(), "-s".into()], Duration::from_secs(5));
        let program = "double() { echo $((2 * $1)); }";
        let good = vec!["test $(double 4) = 8".to_string(), "test $(double 0) = 0".to_string()];
        assert!(grade_code(program, &good, &runner).passed);

        let bad = vec!["test $(double 4) = 9".to_string()];
        let grade = grade_code(program, &bad, &runner);
        assert!(!grade.passed);
        assert_eq!(grade.notes.len(), 1);

        let vacuous = grade_code(program, &[], &runner);
        assert!(vacuous.passed);
        assert_eq!(vacuous.notes, vec!["no tests supplied".to_string()]);
    }

    #[test]
    fn sign_test_matches_known_values() {
        assert!((sign_test_p(9, 1) - 11.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(10, 0) - 1.0 / 1024.0).abs() < 1e-12);
        assert!((sign_test_p(5, 5) - 638.0 / 1024.0).abs() < 1e-12);
        assert_eq!(sign_test_p(0, 0), 1.0);
        assert_eq!(sign_test_p(0, 10), 1.0);
    }

    fn bench_questions() -> Vec<BenchQuestion> {
        vec![
            BenchQuestion {
                id: "q1".into(),
                statement: "What is 3 + 4?".into(),
                ground_truth: Some("7".into()),
                ..BenchQuestion::default()
            },
            BenchQuestion {
                id: "q2".into(),
                statement: "What is 3 + 5?".into(),
                ground_truth: Some("8".into()),
                ..BenchQuestion::default()
            },
        ]
    }

    fn consensus_backend() -> StaticBackend {
        StaticBackend::new()
            .rule("recruiter", |req| roster(recruit_count(req)))
            .rule("solver-draft", |_| "<think>sum</think> The answer is \\boxed{7}".into())
            .rule("solver-critic", |_| "<think>same</think> [Agree]".into())
            .rule("evaluator", |_| "### Correctness: 1\n### Advice: fine".into())
    }

    #[test]
    fn benchmark_accuracy_is_the_mean_of_scores() {
        let config = RunConfig {
            total_agents: 2,
            critic_iterations: 1,
            total_iterations: 1,
            ..RunConfig::default()
        };
        let backend = consensus_backend();
        let report = run_benchmark(&bench_questions(), &config, &backend, &Passthrough);
        // The backend always answers 7: right for q1, wrong for q2.
        assert_eq!(report.per_question.len(), 2);
        assert!(report.per_question[0].correct);
        assert!(!report.per_question[1].correct);
        assert_eq!(report.accuracy, 0.5);
        assert_eq!(report.per_question[0].turns, 4);

        let recomputed = report.per_question.iter().map(|r| r.score).sum::<f64>()
            / report.per_question.len() as f64;
        assert_eq!(report.accuracy, recomputed);
        let mean_turns = report.per_question.iter().map(|r| r.turns as f64).sum::<f64>()
            / report.per_question.len() as f64;
        assert_eq!(report.mean_turns, mean_turns);
    }

    #[test]
    fn sweep_skips_invalid_cells_with_a_note() {
        let base = RunConfig {
            total_agents: 2,
            critic_iterations: 1,
            total_iterations: 1,
            ..RunConfig::default()
        };
        let rows = sweep(
            SweepAxis::TotalAgents,
            &[1, 2],
            &base,
            &bench_questions(),
            &Passthrough,
            |_| Box::new(consensus_backend()),
        );
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].accuracy, 0.0);
        assert!(rows[0].note.as_deref().unwrap().starts_with("skipped:"));
        assert_eq!(rows[1].accuracy, 0.5);
        assert!(rows[1].note.is_none());
    }

    #[test]
    fn sweep_csv_is_flat_and_stable() {
        let rows = vec![
            SweepRow { value: 2048, accuracy: 0.25, mean_tokens: 100.0, mean_turns: 4.0, note: None },
            SweepRow {
                value: 8192,
                accuracy: 0.5,
                mean_tokens: 120.5,
                mean_turns: 4.0,
                note: Some("ignored by the csv".into()),
            },
        ];
        let csv = write_sweep_csv(&rows);
        assert_eq!(
            csv,
            "value,accuracy,mean_tokens,mean_turns\n\
             2048,0.250000,100.000000,4.000000\n\
             8192,0.500000,120.500000,4.000000\n"
        );
    }

    #[test]
    fn code_mode_grades_the_last_code_block() {
        let config = RunConfig {
            total_agents: 2,
            critic_iterations: 1,
            total_iterations: 1,
            ..RunConfig::default()
        };
        let backend = StaticBackend::new()
            .rule("recruiter", |req| roster(recruit_count(req)))
            .rule("solver-draft", |_| {
                "<think>code</think> Here:\n```sh\nanswer() { echo 7; }\n```\n\\boxed{7}".into()
            })
            .rule("solver-critic", |_| "<think>ok</think> [Agree]".into())
            .rule("evaluator", |_| "### Correctness: 1\n### Advice: fine".into());
        let runner = CommandRunner::new(vec!["sh".into(), "-s".into()], Duration::from_secs(5));
        let questions = vec![BenchQuestion {
            id: "c1".into(),
            statement: "Print 7".into(),
            task_type: GradingMode::CodeTests,
            tests: vec!["test $(answer) = 7".to_string()],
            ..BenchQuestion::default()
        }];
        let report = run_benchmark(&questions, &config, &backend, &runner);
        assert_eq!(report.accuracy, 1.0, "{:?}", report.per_question);
    }
}
