//! Completion providers.
//!
//! [`HttpBackend`] speaks the chat-completion JSON protocol, [`MockBackend`]
//! answers from deterministic rules, and [`CachedBackend`] wraps either with
//! a content-addressed on-disk cache so a fingerprint reaches the provider at
//! most once.

mod cache;
mod http;
mod mock;
mod rate_limit;

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheEntry, CachedBackend, ResponseCache};
pub use http::HttpBackend;
pub use mock::{KeywordRule, MockBackend, MockRule, MockSpec};
pub use rate_limit::RateLimiter;

/// Output-token cap for classification prompts when the config sets none.
pub const CLASSIFY_MAX_TOKENS: u32 = 16;
/// Output-token cap for chain-of-thought prompts when the config sets none.
pub const COT_MAX_TOKENS: u32 = 512;

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_rate() -> f64 {
    2.0
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Chat-completion URL. Required unless `mock` is set.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    /// Overrides the per-mode default output cap.
    #[serde(default)]
    pub max_output_tokens: Option<u32>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Requests per second.
    #[serde(default = "default_rate")]
    pub rate_limit: f64,
    #[serde(default = "default_backoff")]
    pub backoff_base_ms: u64,
    /// Rule file for a mock backend.
    #[serde(default)]
    pub mock: Option<PathBuf>,
}

impl ModelConfig {
    pub fn new(name: &str) -> Self {
        ModelConfig {
            name: name.to_string(),
            endpoint: None,
            api_key_env: None,
            temperature: 0.0,
            max_output_tokens: None,
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            rate_limit: default_rate(),
            backoff_base_ms: default_backoff(),
            mock: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.name.trim().is_empty() {
            return Err("model name is empty".into());
        }
        if !(self.temperature >= 0.0) {
            return Err(format!("model {}: temperature must be >= 0", self.name));
        }
        if !(self.rate_limit > 0.0) {
            return Err(format!("model {}: rate_limit must be > 0", self.name));
        }
        if !(self.request_timeout_secs > 0.0) {
            return Err(format!("model {}: request_timeout_secs must be > 0", self.name));
        }
        if self.mock.is_none() {
            match &self.endpoint {
                Some(e) if e.starts_with("http://") || e.starts_with("https://") => {}
                Some(e) => return Err(format!("model {}: endpoint {e:?} is not an http(s) URL", self.name)),
                None => return Err(format!("model {}: needs an endpoint or a mock rule file", self.name)),
            }
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.request_timeout_secs)
    }
}

/// One completion call.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub prompt: &'a str,
    pub max_tokens: u32,
    /// Id of the record being classified; only mocks look at it.
    pub record_id: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub model: String,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
    pub cache_hit: bool,
    pub request_fingerprint: String,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64() * 1000.0)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let ms = f64::deserialize(d)?;
        Ok(Duration::from_secs_f64(ms.max(0.0) / 1000.0))
    }
}

/// Stable hash of everything that determines a completion.
pub fn fingerprint(prompt: &str, model: &str, temperature: f64, max_tokens: u32) -> String {
    let canonical = serde_json::json!([prompt, model, temperature, max_tokens]).to_string();
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailureKind {
    Timeout,
    Transport(String),
    Status { code: u16, body: String },
    MalformedPayload(String),
    ScriptExhausted,
    Config(String),
}

impl FailureKind {
    /// Failures worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            FailureKind::Timeout | FailureKind::Transport(_) => true,
            FailureKind::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureKind::Timeout => write!(f, "request timed out"),
            FailureKind::Transport(m) => write!(f, "transport error: {m}"),
            FailureKind::Status { code, body } => write!(f, "HTTP {code}: {body}"),
            FailureKind::MalformedPayload(m) => write!(f, "malformed provider payload: {m}"),
            FailureKind::ScriptExhausted => write!(f, "scripted mock responses exhausted"),
            FailureKind::Config(m) => write!(f, "backend configuration: {m}"),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{kind} (request {fingerprint}, {attempts} attempt(s))")]
pub struct BackendError {
    pub kind: FailureKind,
    pub fingerprint: String,
    pub attempts: u32,
}

/// A completion provider. Implementations must be safe to call from many
/// threads at once.
pub trait Backend: Send + Sync {
    fn model(&self) -> &str;

    fn temperature(&self) -> f64;

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, BackendError>;

    fn fingerprint(&self, request: &CompletionRequest<'_>) -> String {
        fingerprint(request.prompt, self.model(), self.temperature(), request.max_tokens)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn temperature(&self) -> f64 {
        (**self).temperature()
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Builds the backend a model config describes: a mock when it names a rule
/// file (or `mock_override` is given), the HTTP client otherwise.
pub fn from_config(config: &ModelConfig, mock_override: Option<&MockSpec>) -> Result<Arc<dyn Backend>, String> {
    if let Some(spec) = mock_override {
        return Ok(Arc::new(MockBackend::new(&config.name, config.temperature, spec.clone())));
    }
    if let Some(path) = &config.mock {
        let spec = MockSpec::load(path)?;
        return Ok(Arc::new(MockBackend::new(&config.name, config.temperature, spec)));
    }
    config.validate()?;
    Ok(Arc::new(HttpBackend::new(config.clone())?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_depends_on_every_field() {
        let base = fingerprint("p", "m", 0.0, 16);
        assert_eq!(base, fingerprint("p", "m", 0.0, 16));
        assert_eq!(base.len(), 64);
        assert_ne!(base, fingerprint("p2", "m", 0.0, 16));
        assert_ne!(base, fingerprint("p", "m2", 0.0, 16));
        assert_ne!(base, fingerprint("p", "m", 0.7, 16));
        assert_ne!(base, fingerprint("p", "m", 0.0, 512));
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::new("gpt");
        assert!(c.validate().is_err());
        c.endpoint = Some("http://localhost:1/v1/chat/completions".into());
        assert!(c.validate().is_ok());
        c.temperature = -0.1;
        assert!(c.validate().is_err());
        c.temperature = 0.0;
        c.rate_limit = 0.0;
        assert!(c.validate().is_err());
        c.rate_limit = 1.0;
        c.endpoint = Some("ftp://x".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn transient_classification() {
        assert!(FailureKind::Timeout.is_transient());
        assert!(FailureKind::Status { code: 503, body: String::new() }.is_transient());
        assert!(FailureKind::Status { code: 429, body: String::new() }.is_transient());
        assert!(!FailureKind::Status { code: 401, body: String::new() }.is_transient());
        assert!(!FailureKind::MalformedPayload(String::new()).is_transient());
    }
}
