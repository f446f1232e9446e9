//! Executor stage: optionally runs code found in a solver's solution and
//! appends the program output so later agents can see it.
//!
//! The executor makes no model call, so it contributes no transcript turn
//! and costs no tokens. The default [`Passthrough`] runner leaves solutions
//! untouched — math runs don't need it — while [`CommandRunner`] pipes
//! fenced code through an external interpreter with a hard timeout.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("execution timed out after {0:?}")]
    Timeout(Duration),
    #[error("execution failed: {0}")]
    Failure(String),
}

/// Runs one source snippet and returns its combined output.
pub trait ExecutorRunner: Send + Sync {
    fn run_source(&self, source: &str) -> Result<String, ExecError>;
}

/// The default runner: executes nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl ExecutorRunner for Passthrough {
    fn run_source(&self, _source: &str) -> Result<String, ExecError> {
        Ok(String::new())
    }
}

/// Pipes source into an external command (e.g. `["python3", "-"]`) via
/// stdin and captures stdout/stderr, killing the child at the deadline.
pub struct CommandRunner {
    pub command: Vec<String>,
    pub timeout: Duration,
}

impl CommandRunner {
    pub fn new(command: Vec<String>, timeout: Duration) -> Self {
        Self { command, timeout }
    }
}

impl ExecutorRunner for CommandRunner {
    fn run_source(&self, source: &str) -> Result<String, ExecError> {
        let (program, args) = self
            .command
            .split_first()
            .ok_or_else(|| ExecError::Failure("empty executor command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| ExecError::Failure(format!("spawn {program}: {e}")))?;

        // Feed stdin and drain both pipes from threads so a chatty child
        // can't deadlock against a full pipe buffer.
        let mut stdin = child.stdin.take().expect("piped stdin");
        let source_owned = source.to_string();
        let feed = thread::spawn(move || {
            let _ = stdin.write_all(source_owned.as_bytes());
        });
        let mut stdout_pipe = child.stdout.take().expect("piped stdout");
        let out_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stdout_pipe.read_to_string(&mut buf);
            buf
        });
        let mut stderr_pipe = child.stderr.take().expect("piped stderr");
        let err_reader = thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr_pipe.read_to_string(&mut buf);
            buf
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) => {
                    if Instant::now() >= deadline {
                        let _ = child.kill();
                        let _ = child.wait();
                        let _ = feed.join();
                        return Err(ExecError::Timeout(self.timeout));
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(ExecError::Failure(format!("wait: {e}"))),
            }
        };
        let _ = feed.join();
        let stdout = out_reader.join().unwrap_or_default();
        let stderr = err_reader.join().unwrap_or_default();

        if status.success() {
            Ok(if stderr.is_empty() { stdout } else { format!("{stdout}{stderr}") })
        } else {
            Err(ExecError::Failure(format!(
                "exit status {}: {}",
                status.code().map_or_else(|| "signal".to_string(), |c| c.to_string()),
                stderr.trim()
            )))
        }
    }
}

/// Pulls fenced code blocks out of a solution. An info string (```` ```python ````)
/// is allowed and dropped; unterminated fences are ignored.
pub fn extract_code_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        if !line.trim_start().starts_with("```") {
            continue;
        }
        let mut body = String::new();
        let mut closed = false;
        for inner in lines.by_ref() {
            if inner.trim_start().starts_with("```") {
                closed = true;
                break;
            }
            body.push_str(inner);
            body.push('\n');
        }
        if closed && !body.trim().is_empty() {
            blocks.push(body);
        }
    }
    blocks
}

/// Runs every code block in `solution` through `runner` and returns the
/// solution with an `Execution output:` section appended. Solutions without
/// code (or with a passthrough runner) come back unchanged; execution
/// failures are appended as notes rather than aborting the round.
pub fn run_executor(runner: &dyn ExecutorRunner, solution: &str) -> String {
    let blocks = extract_code_blocks(solution);
    if blocks.is_empty() {
        return solution.to_string();
    }
    let mut outputs = Vec::new();
    for block in &blocks {
        match runner.run_source(block) {
            Ok(output) if output.trim().is_empty() => {}
            Ok(output) => outputs.push(output.trim_end().to_string()),
            Err(e) => outputs.push(format!("[execution error] {e}")),
        }
    }
    if outputs.is_empty() {
        return solution.to_string();
    }
    format!("{solution}\n\nExecution output:\n{}", outputs.join("\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_changes_nothing() {
        let solution = "reasoning...\n```python\nprint(1)\n```\n\\boxed{1}";
        assert_eq!(run_executor(&Passthrough, solution), solution);
    }

    #[test]
    fn code_blocks_are_extracted_with_info_strings() {
        let text = "intro\n```python\nprint('a')\n```\nmiddle\n```\nx = 1\n```\ntail";
        let blocks = extract_code_blocks(text);
        assert_eq!(blocks, vec!["print('a')\n".to_string(), "x = 1\n".to_string()]);
    }

    #[test]
    fn unterminated_and_empty_fences_are_ignored() {
        assert!(extract_code_blocks("```python\nnever closed").is_empty());
        assert!(extract_code_blocks("```\n\n```").is_empty());
        assert!(extract_code_blocks("no fences at all").is_empty());
    }

    #[test]
    fn command_runner_captures_output() {
        let runner = CommandRunner::new(
            vec!["sh".into(), "-s".into()],
            Duration::from_secs(5),
        );
        let output = runner.run_source("echo hello").unwrap();
        assert_eq!(output.trim(), "hello");
    }

    #[test]
    fn command_runner_reports_failures() {
        let runner = CommandRunner::new(vec!["sh".into(), "-s".into()], Duration::from_secs(5));
        let err = runner.run_source("echo oops >&2; exit 3").unwrap_err();
        match err {
            ExecError::Failure(message) => {
                assert!(message.contains("exit status 3"), "{message}");
                assert!(message.contains("oops"), "{message}");
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn command_runner_kills_at_the_deadline() {
        let runner = CommandRunner::new(vec!["sh".into(), "-s".into()], Duration::from_millis(200));
        let started = Instant::now();
        let err = runner.run_source("sleep 30").unwrap_err();
        assert!(matches!(err, ExecError::Timeout(_)));
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn executor_appends_output_and_survives_errors() {
        let runner = CommandRunner::new(vec!["sh".into(), "-s".into()], Duration::from_secs(5));
        let solution = "compute:\n```\necho 42\n```\n\\boxed{42}";
        let appended = run_executor(&runner, solution);
        assert!(appended.starts_with(solution));
        assert!(appended.contains("Execution output:\n42"));

        let failing = "try:\n```\nexit 9\n```\ndone";
        let noted = run_executor(&runner, failing);
        assert!(noted.contains("[execution error]"), "{noted}");
    }
}
