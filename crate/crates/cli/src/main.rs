//! `roundtable` — command-line front end for the collaborative reasoning
//! engine: solve a question, generate a training dataset, validate traces,
//! run benchmarks, sweep a resource axis, and export SFT batches.
//!
//! Exit codes: 0 success (for `solve`, only a Solved run), 1 run failure,
//! 2 usage or configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand};

use commands::{CliError, SolveInput};
use config::{AppConfig, BackendKind, Overrides};
use roundtable::bench::SweepAxis;

#[derive(Parser)]
#[command(name = "roundtable", version, about = "Multi-agent collaborative reasoning runner")]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Globals {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Backend kind, overriding the config file.
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Fixture script for the scripted backend.
    #[arg(long, global = true, value_name = "FILE")]
    script: Option<PathBuf>,
    /// Enable the CEO control loop.
    #[arg(long, global = true)]
    ceo: bool,
    /// Deterministic seed (pool shuffling; recorded in artifacts).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Concurrent question runs (default: number of processor cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for output artifacts (default: current directory).
    #[arg(long, global = true, value_name = "DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-agent loop on one question.
    #[command(group(ArgGroup::new("input").required(true).args(["question", "statement"])))]
    Solve {
        /// JSON file with {id, statement, ground_truth?, ...}.
        #[arg(long, value_name = "FILE")]
        question: Option<PathBuf>,
        /// Inline question statement.
        #[arg(long)]
        statement: Option<String>,
        /// Question id for an inline statement.
        #[arg(long, default_value = "inline", requires = "statement")]
        id: String,
        /// Ground truth for an inline statement.
        #[arg(long, requires = "statement")]
        truth: Option<String>,
    },
    /// Screen a question pool and collect validated traces.
    GenerateData {
        /// JSONL file of question records.
        #[arg(long, value_name = "FILE")]
        pool: PathBuf,
        /// Number of valid traces to collect.
        #[arg(long)]
        target: usize,
    },
    /// Re-derive validation flags for an exported trace dataset.
    ValidateTrace {
        /// Trace dataset (m500.jsonl).
        file: PathBuf,
    },
    /// Solve and grade a benchmark set.
    Bench {
        /// JSONL file of benchmark questions.
        #[arg(long, value_name = "FILE")]
        questions: PathBuf,
    },
    /// Benchmark repeatedly along one resource axis.
    Sweep {
        /// JSONL file of benchmark questions.
        #[arg(long, value_name = "FILE")]
        questions: PathBuf,
        /// Which run parameter to vary.
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated values for the axis.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u32>,
    },
    /// Convert a trace dataset into SFT training batches.
    ExportSft {
        /// Trace dataset (m500.jsonl).
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum AxisArg {
    TotalIterations,
    CriticIterations,
    TotalAgents,
    MaxTokens,
}

impl From<AxisArg> for SweepAxis {
    fn from(axis: AxisArg) -> Self {
        match axis {
            AxisArg::TotalIterations => SweepAxis::TotalIterations,
            AxisArg::CriticIterations => SweepAxis::CriticIterations,
            AxisArg::TotalAgents => SweepAxis::TotalAgents,
            AxisArg::MaxTokens => SweepAxis::MaxTokens,
        }
    }
}

fn workers_or_cores(flag: Option<usize>) -> usize {
    flag.unwrap_or_else(|| {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    })
    .max(1)
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let overrides = Overrides {
        backend: cli.globals.backend,
        script: cli.globals.script.clone(),
        ceo: cli.globals.ceo,
        seed: cli.globals.seed,
        output_dir: cli.globals.output_dir.clone(),
    };
    let needs_backend = !matches!(cli.command, Command::ValidateTrace { .. } | Command::ExportSft { .. });
    let config = if needs_backend {
        AppConfig::resolve(cli.globals.config.as_deref(), &overrides)
            .map_err(|e| CliError::Config(e.to_string()))?
    } else {
        // Validation and export never talk to a backend, so an unset script
        // path must not block them; only the file/flag merge is needed.
        AppConfig::resolve_unchecked(cli.globals.config.as_deref(), &overrides)
            .map_err(|e| CliError::Config(e.to_string()))?
    };

    match &cli.command {
        Command::Solve { question, statement, id, truth } => commands::cmd_solve(
            &config,
            &SolveInput {
                question_file: question.clone(),
                statement: statement.clone(),
                id: id.clone(),
                truth: truth.clone(),
            },
        ),
        Command::GenerateData { pool, target } => commands::cmd_generate_data(
            &config,
            pool,
            *target,
            workers_or_cores(cli.globals.workers),
        ),
        Command::ValidateTrace { file } => commands::cmd_validate_trace(file),
        Command::Bench { questions } => commands::cmd_bench(&config, questions),
        Command::Sweep { questions, axis, values } => {
            commands::cmd_sweep(&config, questions, SweepAxis::from(*axis), values)
        }
        Command::ExportSft { input } => commands::cmd_export_sft(&config, input),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
