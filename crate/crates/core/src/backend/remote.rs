//! OpenAI-compatible HTTP backend. Speaks the `/chat/completions` wire
//! format over a blocking reqwest client, retrying transient failures with
//! exponential backoff.
//!
//! The bearer token is read from an environment variable at call time and
//! never stored or serialized; configuration carries only the *name* of the
//! variable so written artifacts cannot leak credentials.

use std::env;
use std::sync::LazyLock;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AuditEntry, AuditLog, BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason};
use crate::domain::ChatMessage;

pub const DEFAULT_API_KEY_ENV: &str = "ROUNDTABLE_API_KEY";

/// Connection settings for a remote endpoint. `base_url` should already
/// include the API version segment, e.g. `https://host/v1`.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    /// Attempts per request (first try included).
    pub retry_limit: u32,
    /// Base backoff; attempt `n` sleeps `backoff * 2^n` before retrying.
    pub backoff: Duration,
    pub timeout: Duration,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retry_limit: 3,
            backoff: Duration::from_millis(250),
            timeout: Duration::from_secs(600),
        }
    }
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    max_tokens: u32,
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    completion_tokens: Option<u64>,
}

/// Extracts the first choice of a decoded response body.
fn interpret(body: WireResponse) -> Result<ChatResponse, BackendError> {
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| BackendError::Protocol("response carries no choices".into()))?;
    let content = choice.message.content;
    let tokens_out = body
        .usage
        .and_then(|u| u.completion_tokens)
        .unwrap_or_else(|| super::count_tokens(&content));
    let finish = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::LengthCapped,
        _ => FinishReason::Stop,
    };
    Ok(ChatResponse { content, tokens_out, finish })
}

/// Whether an HTTP status is worth retrying: request timeout, rate limiting,
/// and server-side failures are transient; other client errors are not.
fn retryable_status(status: u16) -> bool {
    status == 408 || status == 429 || (500..600).contains(&status)
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    audit: AuditLog,
}

static NO_KEY: LazyLock<String> = LazyLock::new(String::new);

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Transport { message: e.to_string(), attempts: 0 })?;
        Ok(Self { config, client, audit: AuditLog::default() })
    }

    fn api_key(&self) -> String {
        env::var(&self.config.api_key_env).unwrap_or_else(|_| NO_KEY.clone())
    }

    fn attempt(&self, request: &ChatRequest) -> Result<ChatResponse, AttemptError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let wire = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
        };
        let mut builder = self.client.post(&url).json(&wire);
        let key = self.api_key();
        if !key.is_empty() {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| AttemptError::Retry(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let message = format!("HTTP {status}");
            return if retryable_status(status) {
                Err(AttemptError::Retry(message))
            } else {
                Err(AttemptError::Fatal(message))
            };
        }
        let body: WireResponse =
            response.json().map_err(|e| AttemptError::Fatal(format!("bad response body: {e}")))?;
        interpret(body).map_err(|e| AttemptError::Fatal(e.to_string()))
    }
}

enum AttemptError {
    /// Transient: retry with backoff.
    Retry(String),
    /// Permanent: surface immediately.
    Fatal(String),
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate()?;
        let mut last = String::new();
        for attempt in 0..self.config.retry_limit.max(1) {
            if attempt > 0 {
                thread::sleep(self.config.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(request) {
                Ok(response) => {
                    self.audit.record(AuditEntry {
                        tag: request.tag.clone(),
                        max_tokens: request.max_tokens,
                        tokens_out: response.tokens_out,
                    });
                    return Ok(response);
                }
                Err(AttemptError::Fatal(message)) => {
                    return Err(BackendError::Transport { message, attempts: attempt + 1 })
                }
                Err(AttemptError::Retry(message)) => last = message,
            }
        }
        Err(BackendError::Transport { message: last, attempts: self.config.retry_limit.max(1) })
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

    #[test]
    fn wire_request_serializes_the_openai_shape() {
        let messages =
            vec![ChatMessage::system("be brief"), ChatMessage::user("2+2?")];
        let wire = WireRequest {
            model: "default",
            messages: &messages,
            max_tokens: 32000,
            temperature: 0.0,
        };
        let json: serde_json::Value = serde_json::to_value(&wire).unwrap();
        assert_eq!(json["model"], "default");
        assert_eq!(json["max_tokens"], 32000);
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][1]["content"], "2+2?");
    }

    #[test]
    fn wire_response_decodes_and_maps_finish_reasons() {
        let body = r#"{
            "id": "x", "object": "chat.completion",
            "choices": [{"index": 0, "message": {"role": "assistant", "content": "\\boxed{4}"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 9, "completion_tokens": 2, "total_tokens": 11}
        }"#;
        let decoded: WireResponse = serde_json::from_str(body).unwrap();
        let response = interpret(decoded).unwrap();
        assert_eq!(response.content, "\\boxed{4}");
        assert_eq!(response.tokens_out, 2);
        assert_eq!(response.finish, FinishReason::Stop);

        let capped = r#"{"choices": [{"message": {"content": "..."}, "finish_reason": "length"}]}"#;
        let decoded: WireResponse = serde_json::from_str(capped).unwrap();
        let response = interpret(decoded).unwrap();
        assert_eq!(response.finish, FinishReason::LengthCapped);
        assert_eq!(response.tokens_out, 1, "missing usage falls back to counting");
    }

    #[test]
    fn empty_choices_is_a_protocol_error() {
        let decoded: WireResponse = serde_json::from_str(r#"{"choices": []}"#).unwrap();
        assert!(matches!(interpret(decoded), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn retry_classification_covers_the_transient_statuses() {
        for status in [408, 429, 500, 502, 503, 599] {
            assert!(retryable_status(status), "{status} should retry");
        }
        for status in [400, 401, 403, 404, 422] {
            assert!(!retryable_status(status), "{status} should not retry");
        }
    }

    #[test]
    fn config_defaults_are_sane() {
        let config = RemoteConfig::default();
        assert_eq!(config.api_key_env, "ROUNDTABLE_API_KEY");
        assert_eq!(config.retry_limit, 3);
        assert_eq!(config.backoff, Duration::from_millis(250));
    }
}
