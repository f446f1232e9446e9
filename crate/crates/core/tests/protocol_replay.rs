//! End-to-end protocol checks against committed fixtures: a recorded
//! four-turn collaboration replayed through the scripted backend, and the
//! closed-form turn bound exercised over a config grid.

use std::path::PathBuf;

use roundtable::backend::scripted::ScriptedBackend;
use roundtable::domain::{AgentKind, Question, RunConfig, SolveStatus};
use roundtable::orchestrator::{solve, turn_bound};
use roundtable::testkit::{recruit_count, roster, StaticBackend};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn trapezoid() -> Question {
    let text = std::fs::read_to_string(fixture("trapezoid_question.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn golden_trapezoid_replay_solves_in_four_turns() {
    let config = RunConfig {
        total_agents: 2,
        critic_iterations: 1,
        total_iterations: 1,
        ..RunConfig::default()
    };
    let backend = ScriptedBackend::from_script(&fixture("golden_trapezoid.jsonl")).unwrap();
    let outcome = solve(&trapezoid(), &config, &backend);

    assert_eq!(outcome.status, SolveStatus::Solved);
    assert_eq!(outcome.trace.turns.len(), 4);
    assert!(outcome.trace.consensus_reached);
    assert_eq!(outcome.final_answer.as_deref(), Some("181"));
    assert_eq!(outcome.iterations_used, 1);

    let kinds: Vec<AgentKind> = outcome.trace.turns.iter().map(|t| t.agent.kind).collect();
    assert_eq!(
        kinds,
        vec![
            AgentKind::ExpertRecruiter,
            AgentKind::ProblemSolver,
            AgentKind::ProblemSolver,
            AgentKind::Evaluator,
        ]
    );

    // The draft replays the recorded generation length, not a word count.
    assert_eq!(outcome.trace.turns[1].tokens_out, 5695);
    // Both expert personas come from the recorded roster.
    assert_eq!(
        outcome.trace.turns[1].agent.role_description.as_deref(),
        Some(
            "A mathematician specialized in geometric analysis, with expertise in \
             trapezoid properties and area partitioning under parallel segments"
        )
    );
    assert!(outcome
        .trace
        .turns[2]
        .agent
        .role_description
        .as_deref()
        .unwrap()
        .starts_with("A mathematician with expertise in algebraic modeling"));

    assert_eq!(outcome.trace.answer_correct, Some(true));
    assert!(outcome.trace.format_ok);
    assert!(outcome.trace.valid, "the replay is a keepable trace");
}

#[test]
fn golden_replay_consumes_the_whole_script_exactly_once() {
    let config = RunConfig {
        total_agents: 2,
        critic_iterations: 1,
        total_iterations: 1,
        ..RunConfig::default()
    };
    let backend = ScriptedBackend::from_script(&fixture("golden_trapezoid.jsonl")).unwrap();
    let outcome = solve(&trapezoid(), &config, &backend);
    assert_eq!(outcome.status, SolveStatus::Solved);
    use roundtable::backend::ChatBackend;
    assert_eq!(backend.audit_len(), 4, "every fixture entry served exactly once");

    // A second run on the same backend finds the script spent.
    let rerun = solve(&trapezoid(), &config, &backend);
    assert_eq!(rerun.status, SolveStatus::Aborted);
}

fn stonewall_backend() -> StaticBackend {
    StaticBackend::new()
        .rule("recruiter", |req| format!("<think>picking</think>\n{}", roster(recruit_count(req))))
        .rule("solver-draft", |_| "<think>try</think> I claim \\boxed{12}".into())
        .rule("solver-revision", |_| "<think>retry</think> Still \\boxed{12}".into())
        .rule("solver-critic", |_| "<think>off</think> The value is wrong. [Disagree]".into())
        .rule("evaluator", |_| {
            "<think>no</think> ### Correctness: 0\n### Advice: the claimed value does not satisfy the conditions"
                .into()
        })
}

#[test]
fn turn_counts_hit_the_closed_form_bound_across_the_grid() {
    // With critics that never agree and an evaluator that never accepts,
    // every round runs to its full length, so the observed turn count must
    // equal the bound exactly — for every grid point.
    let question = Question::new("grid", "What is 5 + 7?").with_ground_truth("12");
    for agents in [2u32, 3, 5] {
        for critics in [1u32, 3] {
            for rounds in [1u32, 2] {
                let config = RunConfig {
                    total_agents: agents,
                    critic_iterations: critics,
                    total_iterations: rounds,
                    ..RunConfig::default()
                };
                let backend = stonewall_backend();
                let outcome = solve(&question, &config, &backend);
                assert_eq!(outcome.status, SolveStatus::Exhausted, "({agents},{critics},{rounds})");
                assert_eq!(
                    outcome.trace.turns.len() as u64,
                    turn_bound(&config),
                    "({agents},{critics},{rounds}) must run to the bound"
                );
                use roundtable::backend::ChatBackend;
                assert_eq!(backend.audit_len(), outcome.trace.turns.len());
            }
        }
    }
}

#[test]
fn ceo_grid_point_adds_one_turn_per_round() {
    let question = Question::new("grid-ceo", "What is 5 + 7?").with_ground_truth("12");
    let config = RunConfig {
        total_agents: 3,
        critic_iterations: 2,
        total_iterations: 2,
        ceo_enabled: true,
        ..RunConfig::default()
    };
    let backend = stonewall_backend().rule("ceo", |_| {
        "<think>press on</think> ### Decision: <Continue>\n### Recruit Number: 3\n\
         ### Direction: recheck the arithmetic\n### Maximum Tokens: 32000"
            .into()
    });
    let outcome = roundtable::orchestrator::solve_with_ceo(&question, &config, &backend);
    assert_eq!(outcome.status, SolveStatus::Exhausted);
    assert_eq!(outcome.trace.turns.len() as u64, turn_bound(&config));
}
