//! Completion providers behind one interface: live chat-completion endpoints,
//! recorded transcripts, and a prototype-similarity simulator.

#[cfg(feature = "http")]
mod http;
mod prototype;
mod replay;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::PromptBundle;
use crate::tensor::TensorError;

#[cfg(feature = "http")]
pub use http::HttpProvider;
pub use prototype::{prototype_decision, Decision, Lexicon, PrototypeBank, PrototypeSim};
pub use replay::{prompt_key, ReplayProvider, TranscriptEntry, TranscriptWriter};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("replay miss: no transcript entry for hash {0}")]
    ReplayMiss(String),
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("http status {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("empty allowed label set")]
    EmptyAllowed,
    #[error("label {0:?} is not in the prototype bank")]
    UnknownLabel(String),
    #[error("dimension mismatch: query has {query}, prototypes have {bank}")]
    DimensionMismatch { query: usize, bank: usize },
    #[error("non-finite decision score")]
    NonFinite,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            initial_backoff_ms: 500,
            multiplier: 2.0,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = self.multiplier.max(1.0).powi(retry.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Dotted path to the message text in the response body.
    #[serde(default = "default_content_path")]
    pub content_path: String,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_content_path() -> String {
    "choices.0.message.content".into()
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSimConfig {
    /// `EVEC` tensor `[labels, d]` whose row names are the labels.
    pub bank: PathBuf,
    /// Optional `EVEC` tensor `[texts, d]` mapping text (row name) to the
    /// simulated model's reading of it. Unknown texts read as the zero vector.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub biases: BTreeMap<String, f64>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    /// Weight of the in-context examples' label signal.
    #[serde(default = "default_example_weight")]
    pub example_weight: f64,
    /// Score gap by which a secondary candidate must beat every primary one
    /// before the simulator leaves the primary list. `None` never leaves it.
    #[serde(default)]
    pub fallback_margin: Option<f64>,
}

fn default_temperature() -> f64 {
    0.1
}

fn default_example_weight() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    Http(HttpConfig),
    Replay { transcript: PathBuf },
    PrototypeSim(PrototypeSimConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    #[serde(flatten)]
    pub kind: ProviderKind,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_concurrency() -> usize {
    1
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind) -> Self {
        Self {
            kind,
            max_concurrency: 1,
            retry: RetryPolicy::default(),
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_concurrency == 0 {
            return Err(LlmError::Config("max_concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(LlmError::Config("retry.max_attempts must be at least 1".into()));
        }
        match &self.kind {
            ProviderKind::Http(h) if h.endpoint.is_empty() || h.model.is_empty() => {
                Err(LlmError::Config("http provider needs endpoint and model".into()))
            }
            ProviderKind::PrototypeSim(p) if !(p.temperature > 0.0) => {
                Err(LlmError::Config("temperature must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError>;
}

/// A loaded provider plus its concurrency bound.
pub struct LlmClient {
    provider: Box<dyn Provider>,
    max_concurrency: usize,
}

impl std::fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmClient")
            .field("max_concurrency", &self.max_concurrency)
            .finish_non_exhaustive()
    }
}

impl LlmClient {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let provider: Box<dyn Provider> = match &cfg.kind {
            #[cfg(feature = "http")]
            ProviderKind::Http(h) => Box::new(HttpProvider::new(
                h.clone(),
                cfg.retry.clone(),
                cfg.max_concurrency,
            )?),
            #[cfg(not(feature = "http"))]
            ProviderKind::Http(_) => {
                return Err(LlmError::Config("built without the `http` feature".into()))
            }
            ProviderKind::Replay { transcript } => Box::new(ReplayProvider::load(transcript)?),
            ProviderKind::PrototypeSim(p) => Box::new(PrototypeSim::load(p)?),
        };
        Ok(Self {
            provider,
            max_concurrency: cfg.max_concurrency,
        })
    }

    pub fn from_provider(provider: impl Provider + 'static, max_concurrency: usize) -> Self {
        Self {
            provider: Box::new(provider),
            max_concurrency: max_concurrency.max(1),
        }
    }

    pub fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    pub fn complete(&self, prompt: &PromptBundle) -> Result<String, LlmError> {
        self.provider.complete(prompt)
    }
}

/// Counting semaphore bounding in-flight requests.
#[cfg_attr(not(feature = "http"), allow(dead_code))]
#[derive(Debug)]
pub(crate) struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

#[cfg_attr(not(feature = "http"), allow(dead_code))]
impl Gate {
    pub(crate) fn new(permits: usize) -> Self {
        Self {
            free: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard { gate: self }
    }
}

#[cfg_attr(not(feature = "http"), allow(dead_code))]
pub(crate) struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut free = self.gate.free.lock().unwrap_or_else(|e| e.into_inner());
        *free += 1;
        self.gate.cv.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            initial_backoff_ms: 100,
            multiplier: 2.0,
            max_backoff_ms: 350,
        };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(350));
    }

    #[test]
    fn config_from_toml() {
        let cfg: ProviderConfig = toml_like(
            r#"{"kind":"http","endpoint":"http://x/v1/chat/completions","model":"m",
                "api_key_env":"KEY","max_concurrency":4,"retry":{"max_attempts":2}}"#,
        );
        assert_eq!(cfg.max_concurrency, 4);
        assert_eq!(cfg.retry.max_attempts, 2);
        assert_eq!(cfg.retry.initial_backoff_ms, 500);
        match cfg.kind {
            ProviderKind::Http(h) => assert_eq!(h.content_path, "choices.0.message.content"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn toml_like(json: &str) -> ProviderConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn validation() {
        let mut cfg = ProviderConfig::new(ProviderKind::Replay {
            transcript: "t.jsonl".into(),
        });
        assert!(cfg.validate().is_ok());
        cfg.max_concurrency = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gate_bounds_permits() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = Gate::new(2);
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _g = gate.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert_eq!(peak.load(Ordering::SeqCst), 2);
    }
}
