use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, CompletionRequest, FailureKind, ModelResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeywordRule {
    /// Case-insensitive substring looked for in the query block.
    pub contains: String,
    pub response: String,
}

/// How a mock answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MockRule {
    /// Same text for every prompt.
    Fixed { response: String },
    /// First matching keyword wins. Only the final prompt block (after the
    /// last blank line) is searched, so few-shot exemplars do not trigger.
    Keyword {
        rules: Vec<KeywordRule>,
        default: String,
    },
    /// Answers with a planted label per record id.
    HiddenLabel {
        labels: BTreeMap<String, String>,
        #[serde(default = "default_fallback")]
        fallback: String,
    },
    /// The n-th call returns the n-th response; later calls fail.
    Scripted { responses: Vec<String> },
}

fn default_fallback() -> String {
    "I cannot tell.".into()
}

/// Contents of a mock rule file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockSpec {
    pub rule: MockRule,
    /// Artificial latency per call.
    #[serde(default)]
    pub latency_ms: u64,
}

impl MockSpec {
    pub fn new(rule: MockRule) -> Self {
        MockSpec { rule, latency_ms: 0 }
    }

    /// Reads a TOML rule file, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<MockSpec, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        } else {
            toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
        }
    }
}

/// Deterministic offline backend.
#[derive(Debug)]
pub struct MockBackend {
    model: String,
    temperature: f64,
    spec: MockSpec,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(model: &str, temperature: f64, spec: MockSpec) -> Self {
        MockBackend {
            model: model.to_string(),
            temperature,
            spec,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn answer(&self, request: &CompletionRequest<'_>, call: usize) -> Result<String, FailureKind> {
        match &self.spec.rule {
            MockRule::Fixed { response } => Ok(response.clone()),
            MockRule::Keyword { rules, default } => {
                let query = request
                    .prompt
                    .rsplit_once("\n\n")
                    .map(|(_, q)| q)
                    .unwrap_or(request.prompt)
                    .to_lowercase();
                Ok(rules
                    .iter()
                    .find(|r| query.contains(&r.contains.to_lowercase()))
                    .map(|r| r.response.clone())
                    .unwrap_or_else(|| default.clone()))
            }
            MockRule::HiddenLabel { labels, fallback } => Ok(request
                .record_id
                .and_then(|id| labels.get(id))
                .cloned()
                .unwrap_or_else(|| fallback.clone())),
            MockRule::Scripted { responses } => responses.get(call).cloned().ok_or(FailureKind::ScriptExhausted),
        }
    }
}

impl Backend for MockBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn temperature(&self) -> f64 {
        self.temperature
    }

    fn complete(&self, request: &CompletionRequest<'_>) -> Result<ModelResponse, BackendError> {
        let start = Instant::now();
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.spec.latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.spec.latency_ms));
        }
        let fingerprint = self.fingerprint(request);
        match self.answer(request, call) {
            Ok(text) => Ok(ModelResponse {
                text,
                model: self.model.clone(),
                latency: start.elapsed(),
                cache_hit: false,
                request_fingerprint: fingerprint,
            }),
            Err(kind) => Err(BackendError {
                kind,
                fingerprint,
                attempts: 1,
            }),
        }
    }
}
