//! Text-generation backends.
//!
//! Every ranking strategy talks to a model through [`Backend`]. Three
//! implementations are provided: [`HttpBackend`] for a remote server speaking
//! the `/v1/generate` JSON contract, [`OracleBackend`] which answers from
//! relevance judgments with configurable noise, and [`CachedBackend`] which
//! records or replays results keyed by request hash.

mod cache;
mod http;
mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheMode, CacheStore, CachedBackend};
pub use http::{HttpBackend, HttpConfig, ENDPOINT_ENV, TOKEN_ENV};
pub use oracle::{oracle_answer, OracleBackend, OracleConfig, OracleTruth, PromptKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded result for request {request_hash}")]
    CacheMiss { request_hash: String },
    #[error("cache error: {0}")]
    Cache(String),
    #[error("backend lacks capability: {0}")]
    Capability(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo_target: Option<String>,
}

impl GenerationRequest {
    pub fn text(prompt: impl Into<String>, max_new_tokens: u32) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens,
            options: None,
            echo_target: None,
        }
    }

    pub fn with_options<S: Into<String>>(mut self, options: impl IntoIterator<Item = S>) -> Self {
        self.options = Some(options.into_iter().map(Into::into).collect());
        self
    }

    pub fn with_echo_target(mut self, target: impl Into<String>) -> Self {
        self.echo_target = Some(target.into());
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_new_tokens == 0 {
            return Err(BackendError::InvalidRequest("max_new_tokens must be positive".into()));
        }
        if self.options.is_some() && self.echo_target.is_some() {
            return Err(BackendError::InvalidRequest(
                "options and echo_target are mutually exclusive".into(),
            ));
        }
        if let Some(opts) = &self.options {
            let distinct: BTreeSet<&String> = opts.iter().collect();
            if distinct.len() != opts.len() {
                return Err(BackendError::InvalidRequest("options must be distinct".into()));
            }
        }
        Ok(())
    }

    /// Canonical serialized form; the basis of [`request_hash`].
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("request serializes")
    }
}

/// Hex SHA-256 of the request's canonical bytes.
pub fn request_hash(request: &GenerationRequest) -> String {
    hex::encode(Sha256::digest(request.canonical_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option_probs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_token_logprobs: Option<Vec<f64>>,
}

impl GenerationResult {
    pub fn text(text: impl Into<String>) -> Self {
        GenerationResult {
            text: text.into(),
            option_probs: None,
            target_token_logprobs: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(probs) = &self.option_probs {
            if probs.values().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(BackendError::Protocol("option probability outside [0,1]".into()));
            }
            if probs.values().sum::<f64>() > 1.0 + 1e-6 {
                return Err(BackendError::Protocol("option probabilities sum above 1".into()));
            }
        }
        if let Some(lps) = &self.target_token_logprobs {
            if lps.iter().any(|lp| lp.is_nan() || *lp > 0.0) {
                return Err(BackendError::Protocol("token log-probability above 0".into()));
            }
        }
        Ok(())
    }
}

/// What a backend can return beyond plain text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub option_probs: bool,
    pub token_logprobs: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        option_probs: true,
        token_logprobs: true,
    };
}

pub trait Backend: Send + Sync {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;

    fn capabilities(&self) -> Capabilities {
        Capabilities::ALL
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }

    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
}

/// Adds a fixed delay before every call; stands in for model latency in
/// benchmarks.
pub struct FixedLatency<B> {
    inner: B,
    delay: Duration,
}

impl<B> FixedLatency<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        FixedLatency { inner, delay }
    }
}

impl<B: Backend> Backend for FixedLatency<B> {
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        thread::sleep(self.delay);
        self.inner.generate(request)
    }

    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StrategyStats {
    pub calls: u64,
    pub failures: u64,
    /// Items whose score fell back to a neutral value (unparseable answer or
    /// failed call).
    pub degraded: u64,
    #[serde(serialize_with = "ser_duration")]
    pub wall: Duration,
}

fn ser_duration<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64())
}

/// Per-strategy call counts and cumulative call time. Counts only grow.
#[derive(Debug, Default)]
pub struct CallCounter {
    stats: Mutex<BTreeMap<String, StrategyStats>>,
}

impl CallCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count_call(&self, strategy: &str, elapsed: Duration, ok: bool) {
        let mut stats = self.stats.lock().expect("counter lock");
        let entry = stats.entry(strategy.to_string()).or_default();
        entry.calls += 1;
        entry.wall += elapsed;
        if !ok {
            entry.failures += 1;
        }
    }

    pub fn count_degraded(&self, strategy: &str, items: u64) {
        if items == 0 {
            return;
        }
        let mut stats = self.stats.lock().expect("counter lock");
        stats.entry(strategy.to_string()).or_default().degraded += items;
    }

    pub fn calls(&self, strategy: &str) -> u64 {
        self.get(strategy).calls
    }

    pub fn get(&self, strategy: &str) -> StrategyStats {
        self.stats
            .lock()
            .expect("counter lock")
            .get(strategy)
            .copied()
            .unwrap_or_default()
    }

    pub fn total_calls(&self) -> u64 {
        self.stats.lock().expect("counter lock").values().map(|s| s.calls).sum()
    }

    pub fn snapshot(&self) -> BTreeMap<String, StrategyStats> {
        self.stats.lock().expect("counter lock").clone()
    }
}
