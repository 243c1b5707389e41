//! Chat-completion backend abstraction and canonical request identity.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

// Field order is alphabetical: the canonical encoding relies on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into() }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into() }
    }
}

/// Sampling parameters. `seed` is honored by the mock backend only; for live
/// backends it still distinguishes repeated samples in the response cache.
// Field order is alphabetical: the canonical encoding relies on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: u32,
    pub seed: Option<u64>,
    pub temperature: f64,
    pub top_p: f64,
}

impl GenerationParams {
    pub fn new(temperature: f64, max_tokens: u32) -> Self {
        Self { max_tokens, seed: None, temperature, top_p: 1.0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::InvalidRequest("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(BackendError::InvalidRequest("top_p must lie in (0, 1]".into()));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
}

#[derive(Serialize)]
struct CanonicalKeyed<'a> {
    backend_id: &'a str,
    messages: &'a [Message],
    params: &'a GenerationParams,
}

#[derive(Serialize)]
struct Canonical<'a> {
    messages: &'a [Message],
    params: &'a GenerationParams,
}

impl ChatRequest {
    pub fn new(messages: Vec<Message>, params: GenerationParams) -> Self {
        Self { messages, params }
    }

    pub fn single(prompt: impl Into<String>, params: GenerationParams) -> Self {
        Self::new(alloc::vec![Message::user(prompt)], params)
    }

    /// Text of the last user message, or empty.
    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("at least one message is required".into()));
        }
        self.params.validate()
    }

    /// Canonical bytes: JSON with fields sorted by name, texts unmodified.
    pub fn canonical_bytes(&self, backend_id: &str) -> Vec<u8> {
        serde_json::to_vec(&CanonicalKeyed {
            backend_id,
            messages: &self.messages,
            params: &self.params,
        })
        .expect("canonical request always serializes")
    }

    /// SHA-256 (hex) of the canonical bytes including the backend id.
    pub fn cache_key(&self, backend_id: &str) -> String {
        hex_digest(&self.canonical_bytes(backend_id))
    }

    /// SHA-256 (hex) of the canonical request without the backend id.
    pub fn request_digest(&self) -> String {
        let bytes = serde_json::to_vec(&Canonical { messages: &self.messages, params: &self.params })
            .expect("canonical request always serializes");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    use core::fmt::Write;
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One completed request against a named backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub messages: Vec<Message>,
    pub params: GenerationParams,
    pub response_text: String,
    pub backend_id: String,
    pub cache_key: String,
}

impl ChatExchange {
    pub fn new(request: &ChatRequest, backend_id: &str, response_text: String) -> Self {
        Self {
            messages: request.messages.clone(),
            params: request.params,
            response_text,
            backend_id: backend_id.into(),
            cache_key: request.cache_key(backend_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider error (status {status}): {message}")]
    Provider { status: u16, message: String },
    #[error("empty completion")]
    EmptyCompletion,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("scripted failure: {0}")]
    Script(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) | BackendError::RateLimited(_) => true,
            BackendError::Provider { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion model. Implementations must be shareable across threads;
/// `complete_batch` is the hook for issuing independent requests concurrently.
pub trait ChatBackend: Send + Sync {
    fn backend_id(&self) -> &str;

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// Results are returned in request order.
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        (**self).complete_batch(requests)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        (**self).complete_batch(requests)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn backend_id(&self) -> &str {
        (**self).backend_id()
    }
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        (**self).complete_batch(requests)
    }
}

/// Counts requests passed through to the inner backend.
pub struct Metered<B> {
    inner: B,
    requests: AtomicU64,
}

impl<B: ChatBackend> Metered<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, requests: AtomicU64::new(0) }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Metered<B> {
    fn backend_id(&self) -> &str {
        self.inner.backend_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }

    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<String, BackendError>> {
        self.requests.fetch_add(requests.len() as u64, Ordering::SeqCst);
        self.inner.complete_batch(requests)
    }
}

/// Rejects empty or whitespace-only completions.
pub fn non_empty(text: String) -> Result<String, BackendError> {
    if text.trim().is_empty() {
        Err(BackendError::EmptyCompletion)
    } else {
        Ok(text)
    }
}
