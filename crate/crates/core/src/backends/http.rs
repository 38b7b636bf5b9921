use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest, FailureKind, ModelConfig, ModelResponse, RateLimiter};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Chat-completion client with rate limiting and exponential backoff.
pub struct HttpBackend {
    config: ModelConfig,
    endpoint: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("model", &self.config.name)
            .field("endpoint", &self.endpoint)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    pub fn new(config: ModelConfig) -> Result<Self, String> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| format!("model {} has no endpoint", config.name))?;
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| format!("environment variable {var} is not set"))?),
            None => None,
        };
        let agent = ureq::AgentBuilder::new().timeout(config.request_timeout()).build();
        Ok(HttpBackend {
            limiter: RateLimiter::new(config.rate_limit),
            config,
            endpoint,
            api_key,
            agent,
        })
    }

    fn send_once(&self, body: &Value) -> Result<String, FailureKind> {
        let mut request = self.agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match request.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(FailureKind::Status {
                    code,
                    body: body.chars().take(500).collect(),
                });
            }
            Err(ureq::Error::Transport(t)) => {
                let message = t.to_string();
                return Err(if message.contains("timed out") {
                    FailureKind::Timeout
                } else {
                    FailureKind::Transport(message)
                });
            }
        };
        let payload: Value = response.into_json().map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut || e.kind() == std::io::ErrorKind::WouldBlock {
                FailureKind::Timeout
            } else {
                FailureKind::MalformedPayload(e.to_string())
            }
        })?;
        extract_text(&payload)
    }
}

/// Text of the first choice: `message.content`, or `text` for legacy
/// completion servers.
fn extract_text(payload: &Value) -> Result<String, FailureKind> {
    let choice = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| FailureKind::MalformedPayload("no choices".into()))?;
    choice
        .pointer("/message/content")
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| FailureKind::MalformedPayload("first choice has no text content".into()))
}

impl Backend for HttpBackend {
    fn model(&self) -> &str {
        &self.config.name
    }

    fn temperature(&self) -> f64 {
        self.config.temperature
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, BackendError> {
        let fingerprint = self.fingerprint(request);
        let body = json!({
            "model": self.config.name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": self.config.temperature,
            "max_tokens": request.max_tokens,
        });
        let start = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.limiter.acquire();
            match self.send_once(&body) {
                Ok(text) => {
                    return Ok(ModelResponse {
                        text,
                        model: self.config.name.clone(),
                        latency: start.elapsed(),
                        cache_hit: false,
                        request_fingerprint: fingerprint,
                    })
                }
                Err(kind) => {
                    log::warn!(
                        "{}: attempt {attempt}/{max_attempts} for {} failed: {kind}",
                        self.config.name,
                        &fingerprint[..12]
                    );
                    if !kind.is_transient() || attempt >= max_attempts {
                        return Err(BackendError {
                            kind,
                            fingerprint,
                            attempts: attempt,
                        });
                    }
                    let backoff = Duration::from_millis(self.config.backoff_base_ms)
                        .saturating_mul(1 << (attempt - 1).min(16))
                        .min(MAX_BACKOFF);
                    std::thread::sleep(backoff);
                }
            }
        }
    }
}
