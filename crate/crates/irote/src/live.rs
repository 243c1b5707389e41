//! Client for the chat-completions wire protocol.

use std::time::Duration;

use irote_core::backend::{non_empty, BackendError, ChatBackend, ChatRequest};
use serde::Serialize;
use serde_json::Value;

pub const API_KEY_VAR: &str = "IROTE_API_KEY";

#[derive(Debug, Clone)]
pub struct LiveConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key: String,
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            timeout: Duration::from_secs(120),
            attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
}

pub struct LiveBackend {
    agent: ureq::Agent,
    config: LiveConfig,
    id: String,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let id = format!("live:{}", config.model);
        Self { agent, config, id }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            model: &self.config.model,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role.as_str(), content: &m.text })
                .collect(),
            temperature: request.params.temperature,
            top_p: request.params.top_p,
            max_tokens: request.params.max_tokens,
        };
        let mut response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.config.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| BackendError::Transport(e.to_string()))?;
        interpret(status, &text)
    }
}

/// Maps a status and body to the completion text or a typed error.
pub fn interpret(status: u16, body: &str) -> Result<String, BackendError> {
    let json: Option<Value> = serde_json::from_str(body).ok();
    if !(200..300).contains(&status) {
        let message = json
            .as_ref()
            .and_then(|v| v.pointer("/error/message"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| body.chars().take(300).collect());
        return Err(match status {
            401 | 403 => BackendError::Auth(message),
            429 => BackendError::RateLimited(message),
            _ => BackendError::Provider { status, message },
        });
    }
    let json = json.ok_or_else(|| BackendError::Provider { status, message: "response is not JSON".into() })?;
    let content = json.pointer("/choices/0/message/content").and_then(Value::as_str).unwrap_or("");
    non_empty(content.to_string())
}

impl ChatBackend for LiveBackend {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        let mut retry = 0;
        loop {
            match self.attempt(request) {
                Err(e) if e.is_retryable() && retry + 1 < self.config.attempts => {
                    retry += 1;
                    let delay = self.config.backoff(retry);
                    log::warn!("{e}; retrying in {} ms", delay.as_millis());
                    std::thread::sleep(delay);
                }
                other => return other,
            }
        }
    }
}
