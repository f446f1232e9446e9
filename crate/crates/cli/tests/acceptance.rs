//! The acceptance gate. One test per top-level criterion; each prints a
//! single `[acceptance] <name>: PASS|FAIL` line (run with `--nocapture` to
//! see them stream). Every check here is self-contained: fixtures come from
//! the committed `fixtures/` directory, randomness is seeded, and the
//! brute-force oracle below shares no code with the library it checks.
//!
//! Run: `cargo test -p roundtable-cli --test acceptance -- --nocapture`

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roundtable::backend::scripted::ScriptedBackend;
use roundtable::bench::{
    grade_concept_coverage, grade_exact, sign_test_p, sweep, BenchQuestion, GradingMode,
    SweepAxis,
};
use roundtable::datapipe::is_valid_trace;
use roundtable::domain::{
    AgentKind, AgentRole, CeoDecision, ChatMessage, Question, RunConfig, SolveStatus,
    TraceSample, TranscriptTurn, DEFAULT_RECRUIT_BOUNDS, DEFAULT_TOKEN_BUDGET_MENU,
};
use roundtable::orchestrator::executor::Passthrough;
use roundtable::orchestrator::{solve, turn_bound};
use roundtable::parsing::parse_ceo;
use roundtable::prompts::{TemplateId, TemplateSet};
use roundtable::testkit::{recruit_count, roster, StaticBackend, StochasticMock};

fn criterion(name: &str, check: impl FnOnce() -> Result<(), String>) {
    match check() {
        Ok(()) => println!("[acceptance] {name}: PASS"),
        Err(message) => {
            println!("[acceptance] {name}: FAIL — {message}");
            panic!("[acceptance] {name}: FAIL — {message}");
        }
    }
}

fn ensure(cond: bool, message: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(message.into())
    }
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn fixture(name: &str) -> PathBuf {
    root().join("fixtures").join(name)
}

// -------------------------------------------------------------------------
// 1. Golden protocol replay
// -------------------------------------------------------------------------

#[test]
fn golden_protocol_replay() {
    criterion("golden protocol replay", || {
        let config = RunConfig {
            total_agents: 2,
            critic_iterations: 1,
            total_iterations: 1,
            ..RunConfig::default()
        };
        let backend = ScriptedBackend::from_script(&fixture("golden_trapezoid.jsonl"))
            .map_err(|e| e.to_string())?;
        let question: Question =
            serde_json::from_str(&std::fs::read_to_string(fixture("trapezoid_question.json")).unwrap())
                .map_err(|e| e.to_string())?;

        let started = Instant::now();
        let outcome = solve(&question, &config, &backend);
        let elapsed = started.elapsed();

        ensure(outcome.trace.turns.len() == 4, format!("expected 4 turns, got {}", outcome.trace.turns.len()))?;
        ensure(outcome.trace.consensus_reached, "consensus_reached must be true")?;
        ensure(
            outcome.final_answer.as_deref() == Some("181"),
            format!("expected answer 181, got {:?}", outcome.final_answer),
        )?;
        ensure(outcome.trace.answer_correct == Some(true), "verdict must grade correct")?;
        ensure(outcome.status == SolveStatus::Solved, format!("expected Solved, got {:?}", outcome.status))?;
        ensure(elapsed.as_secs_f64() < 1.0, format!("replay took {elapsed:?}, limit 1s"))
    });
}

// -------------------------------------------------------------------------
// 2. CEO directive conformance
// -------------------------------------------------------------------------

const FIGURE_CEO_RESPONSE: &str = "<think> ...Wait, let's see what the solution did. They said \
DA = 325/22, DB^2 = (225/22)^2. But length can't be negative, which indicates a mistake in the \
sign. The correct value is AP = 100/13, hence m+n = \\boxed{113}... </think>\n\n\
### Decision: **Continue** \n\
### Recruit Number: 2 \n\
### Direction: 1) Verifying the power of point application 2) Re-examining the geometric configuration ... \n\
### Maximum Tokens: 8192";

fn random_token(rng: &mut ChaCha8Rng) -> String {
    const POOL: &[&str] = &[
        "Continue", "Stop", "continue", "STOP", "<Continue>", "**Stop**", "proceed", "2", "0",
        "-3", "17", "4", "two", "8192", "4000", "32000", "-9223372036854775808", "99999", "",
        "focus on algebra", "###", ":", "Decision", "\\boxed{7}", "<think>", "</think>",
    ];
    POOL[rng.gen_range(0..POOL.len())].to_string()
}

fn random_garbage(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..200);
    (0..len)
        .map(|_| {
            let c = rng.gen_range(0x20u8..0x7f) as char;
            if rng.gen_bool(0.05) {
                '\n'
            } else {
                c
            }
        })
        .collect()
}

fn mutated_directive(rng: &mut ChaCha8Rng) -> String {
    let mut lines = vec![
        format!("### Decision: {}", random_token(rng)),
        format!("### Recruit Number: {}", random_token(rng)),
        format!("### Direction: {}", random_token(rng)),
        format!("### Maximum Tokens: {}", random_token(rng)),
    ];
    // Header-level mutations: drop, duplicate, reorder, restyle.
    if rng.gen_bool(0.3) {
        let idx = rng.gen_range(0..lines.len());
        lines.remove(idx);
    }
    if rng.gen_bool(0.3) {
        let idx = rng.gen_range(0..lines.len());
        let dup = lines[idx].clone();
        lines.push(dup);
    }
    if rng.gen_bool(0.3) {
        let a = rng.gen_range(0..lines.len());
        let b = rng.gen_range(0..lines.len());
        lines.swap(a, b);
    }
    if rng.gen_bool(0.2) {
        let idx = rng.gen_range(0..lines.len());
        lines[idx] = lines[idx].replace("### ", "**").replacen(':', "**:", 1);
    }
    if rng.gen_bool(0.2) {
        let idx = rng.gen_range(0..lines.len());
        lines[idx] = lines[idx].to_ascii_uppercase();
    }
    let mut text = lines.join("\n");
    if rng.gen_bool(0.4) {
        text = format!("<think>{}</think>\n{text}", random_garbage(rng));
    }
    if rng.gen_bool(0.2) {
        text = format!("<think>{}\n{text}", random_garbage(rng));
    }
    if rng.gen_bool(0.3) {
        text.push_str(&format!("\n{}", random_garbage(rng)));
    }
    text
}

#[test]
fn ceo_directive_conformance() {
    criterion("ceo directive conformance", || {
        // The recorded CEO turn parses to the exact directive it shows.
        let parsed = parse_ceo(FIGURE_CEO_RESPONSE).map_err(|e| e.to_string())?;
        ensure(parsed.directive.decision == CeoDecision::Continue, "decision must be Continue")?;
        ensure(parsed.directive.recruit_number == 2, format!("recruit {}", parsed.directive.recruit_number))?;
        ensure(
            parsed.directive.direction
                == "1) Verifying the power of point application 2) Re-examining the geometric configuration ...",
            format!("direction {:?}", parsed.directive.direction),
        )?;
        ensure(parsed.directive.max_tokens == 8192, format!("tokens {}", parsed.directive.max_tokens))?;
        ensure(parsed.notes.is_empty(), format!("clean parse expected, notes {:?}", parsed.notes))?;

        // Fuzz: whatever comes back Ok must be in bounds and on the menu.
        let mut rng = ChaCha8Rng::seed_from_u64(0xCE0D);
        let mut attempts = 0u64;
        let mut accepted = 0u64;
        for _ in 0..6_000 {
            for text in [random_garbage(&mut rng), mutated_directive(&mut rng)] {
                attempts += 1;
                if let Ok(parse) = parse_ceo(&text) {
                    accepted += 1;
                    parse
                        .directive
                        .validate(&DEFAULT_TOKEN_BUDGET_MENU, DEFAULT_RECRUIT_BOUNDS)
                        .map_err(|e| format!("out-of-bounds directive from {text:?}: {e}"))?;
                }
            }
        }
        ensure(attempts >= 10_000, format!("need >= 10000 samples, ran {attempts}"))?;
        ensure(accepted > 100, format!("fuzzer too weak: only {accepted} parses succeeded"))
    });
}

// -------------------------------------------------------------------------
// 3. Filter oracle equivalence
// -------------------------------------------------------------------------
// An independent checker, written against the trace rules directly: split
// at recruiter turns; a segment consents when a critic-free draft exists or
// some maximal critic run all ends in [Agree]; format needs think blocks
// everywhere and boxed answers on drafts; correctness is the last draft's
// boxed value. No library parsing code is involved.

const TRUTH: &str = "7";

fn turn(ordinal: u32, agent: AgentRole, response: String) -> TranscriptTurn {
    let tokens_out = response.split_whitespace().count() as u64;
    TranscriptTurn {
        ordinal,
        agent,
        prompt: vec![ChatMessage::user("synthetic")],
        response,
        tokens_in: 2,
        tokens_out,
        budget: 2048,
    }
}

fn synthetic_trace(consensus: bool, format: bool, correct: bool, rng: &mut ChaCha8Rng) -> TraceSample {
    let mut turns: Vec<TranscriptTurn> = Vec::new();
    let push = |turns: &mut Vec<TranscriptTurn>, agent: AgentRole, response: String| {
        let ordinal = turns.len() as u32;
        turns.push(turn(ordinal, agent, response));
    };
    let rounds = rng.gen_range(1..=3u32);
    let good = rng.gen_range(0..rounds);
    for round in 0..rounds {
        push(&mut turns, AgentRole::recruiter(), "<think>team</think> 1. An arithmetician".into());
        let answer = if rng.gen_bool(0.5) { TRUTH } else { "9" };
        push(
            &mut turns,
            AgentRole::solver(0, "An arithmetician"),
            format!("<think>sum</think> total \\boxed{{{answer}}}"),
        );
        if consensus && round == good {
            if rng.gen_bool(0.3) {
                // Vacuous: no critics in this segment at all.
            } else {
                for i in 0..rng.gen_range(1..=2u32) {
                    push(
                        &mut turns,
                        AgentRole::solver(i + 1, "A checker"),
                        "<think>check</think> Sound reasoning. **[Agree]**".into(),
                    );
                }
            }
        } else {
            let critics = rng.gen_range(1..=3u32);
            let dissent = rng.gen_range(0..critics);
            for i in 0..critics {
                let verdict = if i == dissent || rng.gen_bool(0.3) { "[Disagree]" } else { "[Agree]" };
                push(
                    &mut turns,
                    AgentRole::solver(i + 1, "A checker"),
                    format!("<think>check</think> Step {i} is shaky. {verdict}"),
                );
            }
        }
        push(
            &mut turns,
            AgentRole::evaluator(),
            "<think>judge</think> ### Correctness: 0\n### Advice: tighten the bound".into(),
        );
    }
    // Rewrite the decisive (last) draft to carry the requested correctness.
    let decider = if correct { TRUTH } else { "9" };
    let last = turns.iter().rposition(|t| t.agent.is_answer_bearing()).unwrap();
    turns[last].response = format!("<think>final</think> total \\boxed{{{decider}}}");
    if !format {
        // Strip the think block somewhere; verdicts and boxed text survive.
        let idx = rng.gen_range(0..turns.len());
        let response = turns[idx].response.clone();
        turns[idx].response = response.split_once("</think>").unwrap().1.trim_start().to_string();
    }
    TraceSample {
        question: Question::new("synthetic", "What is 3 + 4?").with_ground_truth(TRUTH),
        turns,
        final_answer: None,
        consensus_reached: rng.gen_bool(0.5),
        format_ok: rng.gen_bool(0.5),
        answer_correct: None,
        valid: rng.gen_bool(0.5),
    }
}

fn oracle_flags(trace: &TraceSample) -> (bool, bool, bool) {
    let turns = &trace.turns;
    let ends_agree = |text: &str| {
        text.trim_end_matches(|c: char| c.is_whitespace() || "*_`".contains(c)).ends_with("[Agree]")
    };
    // consensus
    let mut consensus = false;
    let mut starts: Vec<usize> = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| t.agent.kind == AgentKind::ExpertRecruiter)
        .map(|(i, _)| i)
        .collect();
    if starts.first() != Some(&0) {
        starts.insert(0, 0);
    }
    starts.push(turns.len());
    for w in starts.windows(2) {
        let seg = &turns[w[0]..w[1]];
        let critic_count = seg.iter().filter(|t| t.agent.is_critic()).count();
        if seg.iter().any(|t| t.agent.is_answer_bearing()) && critic_count == 0 {
            consensus = true;
        }
        let mut i = 0;
        while i < seg.len() {
            if seg[i].agent.is_critic() {
                let mut j = i;
                let mut all = true;
                while j < seg.len() && seg[j].agent.is_critic() {
                    all &= ends_agree(&seg[j].response);
                    j += 1;
                }
                consensus |= all;
                i = j;
            } else {
                i += 1;
            }
        }
    }
    // format
    let format = !turns.is_empty()
        && turns.iter().all(|t| {
            let opens = t.response.matches("<think>").count();
            let closes = t.response.matches("</think>").count();
            opens >= 1
                && opens == closes
                && (!t.agent.is_answer_bearing() || t.response.contains("\\boxed{"))
        });
    // correctness
    let correct = turns
        .iter()
        .rev()
        .find(|t| t.agent.is_answer_bearing())
        .and_then(|t| {
            let pos = t.response.rfind("\\boxed{")?;
            let rest = &t.response[pos + 7..];
            Some(rest[..rest.find('}')?].trim() == TRUTH)
        })
        .unwrap_or(false);
    (consensus, format, correct)
}

#[test]
fn filter_oracle_equivalence() {
    criterion("filter oracle equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF1E1D);
        let mut total = 0usize;
        let mut disagreements = Vec::new();
        for consensus in [false, true] {
            for format in [false, true] {
                for correct in [false, true] {
                    for variant in 0..13 {
                        let trace = synthetic_trace(consensus, format, correct, &mut rng);
                        let report = is_valid_trace(&trace, None);
                        let expected = oracle_flags(&trace);
                        let got = (report.consensus, report.format, report.correct);
                        if got != expected {
                            disagreements.push(format!(
                                "({consensus},{format},{correct}) v{variant}: library {got:?} vs oracle {expected:?}"
                            ));
                        }
                        if expected != (consensus, format, correct) {
                            return Err(format!(
                                "generator missed its target shape ({consensus},{format},{correct}) v{variant}: {expected:?}"
                            ));
                        }
                        total += 1;
                    }
                }
            }
        }
        ensure(total >= 100, format!("only {total} traces generated"))?;
        ensure(
            disagreements.is_empty(),
            format!("{} disagreement(s): {}", disagreements.len(), disagreements.join("; ")),
        )
    });
}

// -------------------------------------------------------------------------
// 4. Turn-count bounds
// -------------------------------------------------------------------------

#[test]
fn turn_count_bounds() {
    criterion("turn-count bounds", || {
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
                    let backend = StaticBackend::new()
                        .rule("recruiter", |req| {
                            format!("<think>pick</think>\n{}", roster(recruit_count(req)))
                        })
                        .rule("solver-draft", |_| "<think>t</think> \\boxed{99}".into())
                        .rule("solver-revision", |_| "<think>r</think> \\boxed{99}".into())
                        .rule("solver-critic", |_| "<think>c</think> Wrong. [Disagree]".into())
                        .rule("evaluator", |_| {
                            "<think>e</think> ### Correctness: 0\n### Advice: redo it".into()
                        });
                    let outcome = solve(&question, &config, &backend);
                    let bound = turn_bound(&config);
                    if outcome.trace.turns.len() as u64 != bound {
                        return Err(format!(
                            "({agents},{critics},{rounds}): {} turns, bound {bound}",
                            outcome.trace.turns.len()
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 5. Determinism
// -------------------------------------------------------------------------

fn run_cli(args: &[&str]) -> Result<(), String> {
    let output = Command::new(env!("CARGO_BIN_EXE_roundtable"))
        .args(args)
        .current_dir(root())
        .output()
        .map_err(|e| e.to_string())?;
    if output.status.code() == Some(0) {
        Ok(())
    } else {
        Err(format!(
            "command {:?} exited {:?}: {}",
            args,
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        ))
    }
}

fn file_bytes(dir: &Path, name: &str) -> Result<Vec<u8>, String> {
    std::fs::read(dir.join(name)).map_err(|e| format!("{name}: {e}"))
}

#[test]
fn determinism() {
    criterion("determinism", || {
        let solve_dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &solve_dirs {
            run_cli(&[
                "--config",
                "fixtures/config_small.toml",
                "--output-dir",
                dir.path().to_str().unwrap(),
                "solve",
                "--question",
                fixture("trapezoid_question.json").to_str().unwrap(),
            ])?;
        }
        for name in ["solve.json", "transcript.txt"] {
            let a = file_bytes(solve_dirs[0].path(), name)?;
            let b = file_bytes(solve_dirs[1].path(), name)?;
            ensure(a == b, format!("cmd_solve {name} differs between consecutive runs"))?;
        }

        let gen_dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for dir in &gen_dirs {
            run_cli(&[
                "--config",
                "fixtures/config_small.toml",
                "--script",
                fixture("script_pipeline.jsonl").to_str().unwrap(),
                "--output-dir",
                dir.path().to_str().unwrap(),
                "--seed",
                "7",
                "--workers",
                "2",
                "generate-data",
                "--pool",
                fixture("pool_sample.jsonl").to_str().unwrap(),
                "--target",
                "2",
            ])?;
        }
        for name in ["m500.jsonl", "sft.jsonl"] {
            let a = file_bytes(gen_dirs[0].path(), name)?;
            let b = file_bytes(gen_dirs[1].path(), name)?;
            ensure(a == b, format!("cmd_generate_data {name} differs between consecutive runs"))?;
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 6. Defaults fidelity
// -------------------------------------------------------------------------

#[test]
fn defaults_fidelity() {
    criterion("defaults fidelity", || {
        let defaults = RunConfig::default();
        ensure(defaults.total_agents == 5, format!("total_agents {}", defaults.total_agents))?;
        ensure(
            defaults.critic_iterations == 3,
            format!("critic_iterations {}", defaults.critic_iterations),
        )?;
        ensure(
            defaults.total_iterations == 2,
            format!("total_iterations {}", defaults.total_iterations),
        )?;

        // The menu of record is the one the CEO is actually shown.
        let body = TemplateSet::builtin().body(TemplateId::CeoUser).to_string();
        let start = body.find("choose from [").ok_or("CEO prompt lost its menu list")?
            + "choose from [".len();
        let end = start + body[start..].find(']').ok_or("unterminated menu list")?;
        let menu: Vec<u32> = body[start..end]
            .split(',')
            .map(|s| s.trim().parse::<u32>().map_err(|e| format!("menu entry {s:?}: {e}")))
            .collect::<Result<_, _>>()?;
        ensure(
            defaults.token_budget_menu == menu,
            format!("config menu {:?} != prompt menu {menu:?}", defaults.token_budget_menu),
        )?;
        ensure(
            DEFAULT_TOKEN_BUDGET_MENU.to_vec() == menu,
            "domain constant drifted from the prompt menu",
        )
    });
}

// -------------------------------------------------------------------------
// 7. Metric checks
// -------------------------------------------------------------------------

#[test]
fn metric_checks() {
    criterion("metric checks", || {
        let concepts: Vec<String> = [
            "anchor", "banner", "cache", "danger", "ember", "fossil", "glacier", "harbor",
            "icicle", "jungle", "kernel", "lantern", "marble", "nectar", "orbit", "prism",
            "quartz", "rudder", "saddle", "tundra",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let paragraph = "The survey anchors its banner findings in a cache of field notes: \
            dangers at the ember line, fossils under the glacier, harbors mapped beside \
            icicles. The jungle team logged kernels of truth by lantern light, marbled \
            samples rich in nectar, and an orbit of follow-up visits.";
        let coverage = grade_concept_coverage(paragraph, &concepts);
        ensure(
            (coverage - 0.75).abs() < 1e-12,
            format!("expected coverage 15/20 = 0.75, got {coverage}"),
        )?;

        ensure(grade_exact("181.0", "181"), "\"181.0\" must equal \"181\"")?;
        ensure(!grade_exact("23", "113"), "\"23\" must not equal \"113\"")
    });
}

// -------------------------------------------------------------------------
// 8. Scaling-trend machinery
// -------------------------------------------------------------------------

#[test]
fn scaling_trend_machinery() {
    criterion("scaling-trend machinery", || {
        let started = Instant::now();
        let values = [2048u32, 8192, 16384];
        let questions: Vec<BenchQuestion> = (0..12)
            .map(|i| BenchQuestion {
                id: format!("q{i:02}"),
                statement: format!("Compute the canonical value of sequence item {i}."),
                task_type: GradingMode::Exact,
                ground_truth: Some("7".into()),
                concepts: Vec::new(),
                tests: Vec::new(),
            })
            .collect();
        let base = RunConfig {
            total_agents: 2,
            critic_iterations: 1,
            total_iterations: 1,
            ..RunConfig::default()
        };

        let reps = 30;
        let mut sums = [0.0f64; 3];
        let (mut wins, mut losses) = (0u64, 0u64);
        for rep in 0..reps {
            let seed = 0xACCE_5500 + rep as u64;
            let rows = sweep(SweepAxis::MaxTokens, &values, &base, &questions, &Passthrough, |_| {
                Box::new(StochasticMock::new(seed, "7"))
            });
            let acc: Vec<f64> = rows.iter().map(|r| r.accuracy).collect();
            for (i, a) in acc.iter().enumerate() {
                sums[i] += a;
            }
            for pair in [(0usize, 1usize), (1, 2)] {
                if acc[pair.1] > acc[pair.0] {
                    wins += 1;
                } else if acc[pair.1] < acc[pair.0] {
                    losses += 1;
                }
            }
        }
        let means: Vec<f64> = sums.iter().map(|s| s / reps as f64).collect();
        ensure(
            means[0] <= means[1] + 1e-12 && means[1] <= means[2] + 1e-12,
            format!("mean accuracy not non-decreasing: {means:?}"),
        )?;
        let p = sign_test_p(wins, losses);
        ensure(
            p < 0.05,
            format!("sign test p = {p:.6} (wins {wins}, losses {losses}) not significant"),
        )?;
        let elapsed = started.elapsed();
        ensure(elapsed.as_secs_f64() < 60.0, format!("sweep took {elapsed:?}, limit 60s"))
    });
}

// -------------------------------------------------------------------------
// 9. Live smoke test (optional, environment-gated)
// -------------------------------------------------------------------------

#[test]
fn live_smoke() {
    let Some(_base_url) = std::env::var("ROUNDTABLE_BASE_URL").ok().filter(|v| !v.trim().is_empty())
    else {
        println!("[acceptance] live smoke: SKIPPED (ROUNDTABLE_BASE_URL not set)");
        return;
    };
    criterion("live smoke", || {
        let model = std::env::var("ROUNDTABLE_MODEL_ID").unwrap_or_else(|_| "default".into());
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("live.toml");
        std::fs::write(
            &config_path,
            format!(
                "[run]\ntotal_agents = 2\ncritic_iterations = 1\ntotal_iterations = 1\n\
                 [backend]\nkind = \"remote\"\nmodel_id = \"{model}\"\n"
            ),
        )
        .map_err(|e| e.to_string())?;
        // Base URL and credential both come from the environment.
        run_cli(&[
            "--config",
            config_path.to_str().unwrap(),
            "--output-dir",
            dir.path().to_str().unwrap(),
            "solve",
            "--statement",
            "Find the sum of all positive divisors of 12.",
            "--truth",
            "28",
        ])
        .or_else(|first| {
            // Exit 1 (Exhausted) still counts: the criterion asks for a
            // well-formed trace, not a solved one.
            if first.contains("exited Some(1)") {
                Ok(())
            } else {
                Err(first)
            }
        })?;
        let solve_json = std::fs::read_to_string(dir.path().join("solve.json"))
            .map_err(|e| format!("solve.json missing: {e}"))?;
        let value: serde_json::Value = serde_json::from_str(&solve_json).map_err(|e| e.to_string())?;
        let turns = value["outcome"]["trace"]["turns"].as_array().ok_or("no turns array")?;
        ensure(!turns.is_empty(), "live trace has no turns")?;
        ensure(
            value["outcome"]["status"] != "aborted",
            format!("live run aborted: {}", value["outcome"]["notes"]),
        )
    });
}
