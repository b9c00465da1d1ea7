//! Chat-completion client with bounded retries, and the HTTP backend for
//! OpenAI-compatible endpoints.
//!
//! The retry loop lives here and is shared by every backend: transport
//! faults, HTTP 429, and 5xx responses are retried with exponential backoff
//! up to the configured attempt limit; other 4xx responses fail immediately.

use std::time::{Duration, Instant};

use serde::Deserialize;

use crate::explainer::ExplainError;

/// Environment variable carrying the bearer token for live endpoints.
pub const API_KEY_ENV: &str = "AGC_LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// First backoff delay; doubles per retry.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
        }
    }
}

/// Client settings; temperature stays 0.0 and the seed is fixed per run so
/// endpoints that support seeding behave deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmClientConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub request_seed: u64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub token_budget: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            base_url: "https://api.openai.com".into(),
            model_name: "gpt-4o-mini".into(),
            temperature: 0.0,
            request_seed: 42,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            token_budget: 16_000,
        }
    }
}

/// One chat request: a system message and a user message.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub system: &'a str,
    pub user: &'a str,
    pub temperature: f64,
    pub seed: u64,
}

/// Backend-reported failure, classified for the retry loop.
#[derive(Debug, Clone, PartialEq)]
pub enum BackendError {
    Transport(String),
    Http { status: u16, body: String },
}

impl BackendError {
    fn retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
        }
    }

    fn describe(&self) -> String {
        match self {
            BackendError::Transport(msg) => format!("transport error: {msg}"),
            BackendError::Http { status, body } => format!("HTTP {status}: {body}"),
        }
    }
}

/// Anything that can answer a chat request: the live HTTP backend or the
/// in-repo mock.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
    fn name(&self) -> &str;
}

/// Successful exchange: content, end-to-end latency, attempts used.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExchange {
    pub content: String,
    pub latency_s: f64,
    pub attempts: u32,
}

/// Sends one request through the retry loop, recording end-to-end latency
/// (backoff included).
pub fn request_explanation(
    cfg: &LlmClientConfig,
    backend: &dyn ChatBackend,
    system: &str,
    user: &str,
) -> Result<RawExchange, ExplainError> {
    let request = ChatRequest {
        model: &cfg.model_name,
        system,
        user,
        temperature: cfg.temperature,
        seed: cfg.request_seed,
    };
    let started = Instant::now();
    let max_attempts = cfg.retry.max_attempts.max(1);
    let mut attempts = 0;
    loop {
        attempts += 1;
        match backend.complete(&request) {
            Ok(content) => {
                return Ok(RawExchange {
                    content,
                    latency_s: started.elapsed().as_secs_f64(),
                    attempts,
                })
            }
            Err(err) if err.retryable() => {
                if attempts >= max_attempts {
                    return Err(ExplainError::TransportExhausted {
                        attempts,
                        last: err.describe(),
                    });
                }
                let delay = cfg.retry.base_delay_ms.saturating_mul(1 << (attempts - 1));
                if delay > 0 {
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
            Err(BackendError::Http { status, body }) => {
                return Err(ExplainError::Request { status, body });
            }
            Err(BackendError::Transport(_)) => unreachable!("transport errors are retryable"),
        }
    }
}

#[derive(Deserialize)]
struct ChatCompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

/// Live backend: POSTs to `{base_url}/v1/chat/completions` with bearer auth
/// from [`API_KEY_ENV`] and returns the first choice's message content.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: String,
    label: String,
}

impl HttpBackend {
    pub fn from_env(base_url: &str) -> Result<Self, ExplainError> {
        let api_key = std::env::var(API_KEY_ENV).map_err(|_| ExplainError::MissingCredential)?;
        Ok(Self::with_key(base_url, api_key))
    }

    /// Backend with an explicit credential (embedding, tests).
    pub fn with_key(base_url: &str, api_key: String) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build();
        HttpBackend {
            agent: config.into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            label: format!("live:{base_url}"),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = serde_json::json!({
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system},
                {"role": "user", "content": request.user},
            ],
            "temperature": request.temperature,
            "seed": request.seed,
        })
        .to_string();

        let url = format!("{}/v1/chat/completions", self.base_url);
        let mut response = self
            .agent
            .post(&url)
            .header("authorization", &format!("Bearer {}", self.api_key))
            .header("content-type", "application/json")
            .send(body.as_bytes())
            .map_err(|e| BackendError::Transport(e.to_string()))?;

        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        let parsed: ChatCompletionResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::Transport(format!("malformed completion payload: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| {
                BackendError::Transport("completion payload carried no message content".into())
            })
    }

    fn name(&self) -> &str {
        &self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct ScriptedBackend {
        failures: Vec<BackendError>,
        calls: AtomicU32,
    }

    impl ChatBackend for ScriptedBackend {
        fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
            let call = self.calls.fetch_add(1, Ordering::SeqCst) as usize;
            match self.failures.get(call) {
                Some(err) => Err(err.clone()),
                None => Ok("{\"ok\": true}".into()),
            }
        }

        fn name(&self) -> &str {
            "scripted"
        }
    }

    fn fast_cfg() -> LlmClientConfig {
        LlmClientConfig {
            retry: RetryPolicy {
                max_attempts: 3,
                base_delay_ms: 0,
            },
            ..Default::default()
        }
    }

    #[test]
    fn succeeds_after_two_transport_failures() {
        let backend = ScriptedBackend {
            failures: vec![
                BackendError::Transport("reset".into()),
                BackendError::Transport("reset".into()),
            ],
            calls: AtomicU32::new(0),
        };
        let exchange = request_explanation(&fast_cfg(), &backend, "s", "u").unwrap();
        assert_eq!(exchange.attempts, 3);
        assert_eq!(exchange.content, "{\"ok\": true}");
    }

    #[test]
    fn exhausts_on_persistent_429() {
        let backend = ScriptedBackend {
            failures: vec![
                BackendError::Http {
                    status: 429,
                    body: "slow down".into()
                };
                5
            ],
            calls: AtomicU32::new(0),
        };
        match request_explanation(&fast_cfg(), &backend, "s", "u") {
            Err(ExplainError::TransportExhausted { attempts: 3, .. }) => {}
            other => panic!("expected exhaustion, got {other:?}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_error_fails_immediately() {
        let backend = ScriptedBackend {
            failures: vec![BackendError::Http {
                status: 401,
                body: "bad key".into(),
            }],
            calls: AtomicU32::new(0),
        };
        match request_explanation(&fast_cfg(), &backend, "s", "u") {
            Err(ExplainError::Request { status: 401, .. }) => {}
            other => panic!("expected request error, got {other:?}"),
        }
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn server_errors_are_retried() {
        let backend = ScriptedBackend {
            failures: vec![BackendError::Http {
                status: 503,
                body: "overloaded".into(),
            }],
            calls: AtomicU32::new(0),
        };
        let exchange = request_explanation(&fast_cfg(), &backend, "s", "u").unwrap();
        assert_eq!(exchange.attempts, 2);
    }

    #[test]
    fn missing_credential_is_a_config_error() {
        // The variable is absent in the test environment unless exported.
        if std::env::var(API_KEY_ENV).is_ok() {
            return;
        }
        assert!(matches!(
            HttpBackend::from_env("https://example.invalid"),
            Err(ExplainError::MissingCredential)
        ));
    }
}
