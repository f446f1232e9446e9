//! The six subcommands. Every artifact is line-delimited JSON (plus one
//! human-readable transcript and one CSV projection) and embeds the
//! effective configuration snapshot, so a file on disk always says how it
//! was produced. Nothing here writes timestamps or absolute environment
//! detail: the same invocation yields byte-identical files.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::json;

use roundtable::backend::scripted::{load_script, ScriptedBackend};
use roundtable::backend::remote::{RemoteBackend, RemoteConfig};
use roundtable::backend::ChatBackend;
use roundtable::bench::{run_benchmark, sweep, write_sweep_csv, BenchQuestion, SweepAxis};
use roundtable::datapipe::{
    export_m500, export_sft_batches, generate_dataset, import_m500, is_valid_trace,
    write_sft_file, GenerateOptions,
};
use roundtable::domain::{AgentKind, Question, SolveOutcome, SolveStatus};
use roundtable::orchestrator::executor::{CommandRunner, ExecutorRunner, Passthrough};
use roundtable::orchestrator::{Engine, EngineOptions};

use crate::config::{AppConfig, BackendKind, ExecutorKind};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad invocation or unusable configuration/input: exit 2.
    #[error("{0}")]
    Config(String),
    /// The run itself failed: exit 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

pub type CmdResult = Result<u8, CliError>;

// --- wiring ---------------------------------------------------------------

fn build_backend(config: &AppConfig) -> Result<Box<dyn ChatBackend>, CliError> {
    match config.backend.kind {
        BackendKind::Scripted => {
            let path = config
                .backend
                .script_path
                .as_ref()
                .expect("checked by AppConfig::check");
            let backend = ScriptedBackend::from_script(path)
                .map_err(|e| CliError::Config(format!("cannot load script: {e}")))?;
            Ok(Box::new(backend))
        }
        BackendKind::Remote => {
            let remote = RemoteConfig {
                base_url: config.backend.base_url.clone().expect("checked"),
                api_key_env: config.backend.api_key_env.clone(),
                retry_limit: config.run.retry_limit,
                ..RemoteConfig::default()
            };
            let backend = RemoteBackend::new(remote)
                .map_err(|e| CliError::Config(format!("cannot build remote backend: {e}")))?;
            Ok(Box::new(backend))
        }
    }
}

fn build_runner(config: &AppConfig) -> Box<dyn ExecutorRunner> {
    match config.executor.kind {
        ExecutorKind::Passthrough => Box::new(Passthrough),
        ExecutorKind::Command => Box::new(CommandRunner::new(
            config.executor.command.clone(),
            Duration::from_secs(config.executor.timeout_seconds),
        )),
    }
}

fn engine_options(config: &AppConfig) -> EngineOptions {
    let defaults = EngineOptions::default();
    EngineOptions {
        model_id: config.backend.model_id.clone().unwrap_or(defaults.model_id),
        temperature: config.backend.temperature.unwrap_or(defaults.temperature),
        tag_scope: None,
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create output dir {}: {e}", dir.display())))
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::write(&path, content)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn read_to_string(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Parses one JSON record per non-empty line.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = read_to_string(path)?;
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| {
            CliError::Config(format!("{}:{}: {e}", path.display(), index + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

// --- solve ----------------------------------------------------------------

pub struct SolveInput {
    pub question_file: Option<PathBuf>,
    pub statement: Option<String>,
    pub id: String,
    pub truth: Option<String>,
}

pub fn cmd_solve(config: &AppConfig, input: &SolveInput) -> CmdResult {
    let question = match (&input.question_file, &input.statement) {
        (Some(path), None) => {
            let text = read_to_string(path)?;
            serde_json::from_str::<Question>(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        (None, Some(statement)) => {
            let mut q = Question::new(&input.id, statement);
            if let Some(truth) = &input.truth {
                q = q.with_ground_truth(truth);
            }
            q
        }
        _ => unreachable!("clap enforces exactly one input source"),
    };

    let backend = build_backend(config)?;
    let runner = build_runner(config);
    let outcome = Engine::new(&config.run, backend.as_ref())
        .with_runner(runner.as_ref())
        .with_options(engine_options(config))
        .run(&question);

    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let record = json!({ "config": config.snapshot(), "outcome": outcome });
    let json_path = write_artifact(&dir, "solve.json", &format!("{record}\n"))?;
    let transcript_path = write_artifact(&dir, "transcript.txt", &render_transcript(&outcome))?;

    println!("wrote {} and {}", json_path.display(), transcript_path.display());
    match outcome.status {
        SolveStatus::Solved => {
            println!(
                "solved in {} turn(s): {}",
                outcome.trace.turns.len(),
                outcome.final_answer.as_deref().unwrap_or("<no boxed answer>")
            );
            Ok(0)
        }
        SolveStatus::Exhausted => {
            eprintln!("run exhausted its budget without an accepted solution");
            Ok(1)
        }
        SolveStatus::Aborted => {
            eprintln!("run aborted: {}", outcome.notes.join("; "));
            Ok(1)
        }
    }
}

fn agent_label(turn: &roundtable::domain::TranscriptTurn) -> String {
    match turn.agent.kind {
        AgentKind::ExpertRecruiter => "Expert Recruiter".to_string(),
        AgentKind::ProblemSolver => {
            let index = turn.agent.solver_index.unwrap_or_default();
            let role = turn.agent.role_description.as_deref().unwrap_or("unnamed");
            format!("Problem Solver {index} ({role})")
        }
        AgentKind::Executor => "Executor".to_string(),
        AgentKind::Evaluator => "Evaluator".to_string(),
        AgentKind::Ceo => "CEO".to_string(),
    }
}

fn render_transcript(outcome: &SolveOutcome) -> String {
    let trace = &outcome.trace;
    let mut out = String::new();
    out.push_str(&format!("question: {}\n{}\n", trace.question.id, trace.question.statement));
    for turn in &trace.turns {
        out.push_str(&format!(
            "\n--- turn {} | {} | budget {} | tokens in {} out {} ---\n{}\n",
            turn.ordinal,
            agent_label(turn),
            turn.budget,
            turn.tokens_in,
            turn.tokens_out,
            turn.response.trim_end()
        ));
    }
    out.push_str(&format!(
        "\nstatus: {:?}\nfinal answer: {}\niterations used: {}\ntotal tokens: {}\n\
         consensus: {} | format: {} | correct: {} | valid: {}\n",
        outcome.status,
        outcome.final_answer.as_deref().unwrap_or("<none>"),
        outcome.iterations_used,
        outcome.total_tokens,
        trace.consensus_reached,
        trace.format_ok,
        trace.answer_correct.map_or("ungraded".to_string(), |b| b.to_string()),
        trace.valid,
    ));
    if !outcome.notes.is_empty() {
        out.push_str("notes:\n");
        for note in &outcome.notes {
            out.push_str(&format!("  - {note}\n"));
        }
    }
    out
}

// --- generate-data ----------------------------------------------------------

pub fn cmd_generate_data(
    config: &AppConfig,
    pool_file: &Path,
    target: usize,
    workers: usize,
) -> CmdResult {
    let pool: Vec<Question> = read_jsonl(pool_file)?;
    if pool.is_empty() {
        return Err(CliError::Config(format!("{}: empty question pool", pool_file.display())));
    }
    let backend = build_backend(config)?;
    let options = GenerateOptions {
        target,
        seed: config.seed,
        workers,
        engine: engine_options(config),
    };
    let report = generate_dataset(&pool, &config.run, backend.as_ref(), &options);

    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let snapshot = config.snapshot();

    let mut m500 = Vec::new();
    export_m500(&mut m500, Some(&snapshot), &report.dataset)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let m500_path = dir.join("m500.jsonl");
    fs::write(&m500_path, &m500)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", m500_path.display())))?;

    let batches = export_sft_batches(&report.dataset);
    let mut sft = Vec::new();
    write_sft_file(&mut sft, Some(&snapshot), &batches)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let sft_path = dir.join("sft.jsonl");
    fs::write(&sft_path, &sft)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", sft_path.display())))?;

    let s = &report.stats;
    println!(
        "collected {}/{} valid traces ({} runs, {} failed, {} invalid; \
         screened out: {} no-truth, {} judge, {} probe; {} duplicate id(s))",
        s.kept,
        target,
        s.runs_attempted,
        s.failed,
        s.invalid_traces,
        s.missing_ground_truth,
        s.judge_rejected,
        s.probe_rejected,
        s.duplicates
    );
    println!("wrote {} and {}", m500_path.display(), sft_path.display());
    if report.pool_exhausted {
        eprintln!(
            "warning: pool exhausted after {} of {} requested traces; outputs are partial",
            s.kept, target
        );
    }
    Ok(0)
}

// --- validate-trace ---------------------------------------------------------

pub fn cmd_validate_trace(file: &Path) -> CmdResult {
    let text = read_to_string(file)?;
    let import = import_m500(BufReader::new(text.as_bytes()))
        .map_err(|e| CliError::Config(format!("{}: {e}", file.display())))?;
    if import.traces.is_empty() {
        return Err(CliError::Config(format!("{}: no trace records", file.display())));
    }
    let mut invalid = 0usize;
    for trace in &import.traces {
        let report = is_valid_trace(trace, None);
        if report.valid() {
            println!("{}: VALID", trace.question.id);
        } else {
            invalid += 1;
            println!(
                "{}: INVALID (consensus={} format={} correct={})",
                trace.question.id, report.consensus, report.format, report.correct
            );
            for violation in &report.violations {
                println!("    - {violation}");
            }
        }
    }
    let total = import.traces.len();
    println!("{} of {total} trace(s) valid", total - invalid);
    Ok(if invalid == 0 { 0 } else { 1 })
}

// --- bench ------------------------------------------------------------------

pub fn cmd_bench(config: &AppConfig, questions_file: &Path) -> CmdResult {
    let questions: Vec<BenchQuestion> = read_jsonl(questions_file)?;
    if questions.is_empty() {
        return Err(CliError::Config(format!("{}: no questions", questions_file.display())));
    }
    let backend = build_backend(config)?;
    let runner = build_runner(config);
    let report = run_benchmark(&questions, &config.run, backend.as_ref(), runner.as_ref());

    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let record = json!({ "config": config.snapshot(), "report": report });
    let path = write_artifact(&dir, "bench.json", &format!("{record}\n"))?;

    println!(
        "accuracy {:.4} over {} question(s); mean tokens {:.1}, mean turns {:.1}",
        report.accuracy,
        report.per_question.len(),
        report.mean_tokens,
        report.mean_turns
    );
    println!("wrote {}", path.display());

    let all_aborted = report
        .per_question
        .iter()
        .all(|row| row.note.as_deref().is_some_and(|n| n.starts_with("aborted")));
    if all_aborted {
        eprintln!("every question aborted; see the report notes");
        return Ok(1);
    }
    Ok(0)
}

// --- sweep --------------------------------------------------------------------

pub fn cmd_sweep(
    config: &AppConfig,
    questions_file: &Path,
    axis: SweepAxis,
    values: &[u32],
) -> CmdResult {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one --values entry".into()));
    }
    for &value in values {
        if let Err(e) = axis.apply(&config.run, value).validate() {
            return Err(CliError::Config(format!(
                "illegal value {value} for axis {}: {e}",
                axis.name()
            )));
        }
    }
    let questions: Vec<BenchQuestion> = read_jsonl(questions_file)?;
    if questions.is_empty() {
        return Err(CliError::Config(format!("{}: no questions", questions_file.display())));
    }

    // Each cell gets a fresh backend so scripted fixtures replay per value.
    let runner = build_runner(config);
    let rows = match config.backend.kind {
        BackendKind::Scripted => {
            let path = config.backend.script_path.as_ref().expect("checked");
            let entries = load_script(path)
                .map_err(|e| CliError::Config(format!("cannot load script: {e}")))?;
            sweep(axis, values, &config.run, &questions, runner.as_ref(), |_| {
                Box::new(ScriptedBackend::from_entries(entries.clone()))
            })
        }
        BackendKind::Remote => {
            let remote = RemoteConfig {
                base_url: config.backend.base_url.clone().expect("checked"),
                api_key_env: config.backend.api_key_env.clone(),
                retry_limit: config.run.retry_limit,
                ..RemoteConfig::default()
            };
            sweep(axis, values, &config.run, &questions, runner.as_ref(), |_| {
                Box::new(RemoteBackend::new(remote.clone()).expect("client built once already"))
            })
        }
    };

    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let record = json!({
        "config": config.snapshot(),
        "axis": axis.name(),
        "rows": rows,
    });
    let json_path = write_artifact(&dir, "sweep.json", &format!("{record}\n"))?;
    let csv_path = write_artifact(&dir, "sweep.csv", &write_sweep_csv(&rows))?;

    for row in &rows {
        println!(
            "{} = {:>6}: accuracy {:.4}, mean tokens {:.1}",
            axis.name(),
            row.value,
            row.accuracy,
            row.mean_tokens
        );
    }
    println!("wrote {} and {}", json_path.display(), csv_path.display());
    Ok(0)
}

// --- export-sft -----------------------------------------------------------------

pub fn cmd_export_sft(config: &AppConfig, input: &Path) -> CmdResult {
    let text = read_to_string(input)?;
    let import = import_m500(BufReader::new(text.as_bytes()))
        .map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    if import.traces.is_empty() {
        return Err(CliError::Config(format!("{}: no trace records", input.display())));
    }
    // Provenance: keep the generating run's config when the dataset carries
    // one; otherwise stamp this invocation's.
    let header = import.config.unwrap_or_else(|| config.snapshot());
    let batches = export_sft_batches(&import.traces);
    let mut sft = Vec::new();
    write_sft_file(&mut sft, Some(&header), &batches).map_err(|e| CliError::Run(e.to_string()))?;

    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let path = dir.join("sft.jsonl");
    fs::write(&path, &sft)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))?;
    let pairs: usize = batches.iter().map(Vec::len).sum();
    println!("wrote {} ({} batch(es), {} pair(s))", path.display(), batches.len(), pairs);
    Ok(0)
}
