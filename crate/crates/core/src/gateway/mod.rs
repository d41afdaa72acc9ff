//! Uniform access to chat-completion models.
//!
//! Every request goes through [`Gateway::complete`], which consults the
//! response cache, enforces the gateway-wide in-flight cap and retries
//! transport failures and throttling with exponential backoff.

mod cache;
mod remote;
mod scripted;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::{Mutex, Semaphore};

pub use cache::ResponseCache;
pub use remote::OpenAiCompatible;
pub use scripted::{Fixture, FixtureError, ScriptedProvider, SubstringPattern};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn human(content: impl Into<String>) -> Self {
        Self {
            role: Role::Human,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub provider_id: String,
    pub model_id: String,
    /// Which prompt template produced the turns.
    pub template_id: String,
    /// Always ends with a human turn.
    pub turns: Vec<ChatTurn>,
    /// Text the assistant's reply is expected to open with. Shown in
    /// transcripts; not sent over the chat wire format.
    pub assistant_prefix: Option<String>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.turns.last() {
            Some(t) if t.role == Role::Human => {}
            _ => return Err(GatewayError::InvalidRequest("turns must end with a human turn".into())),
        }
        if self.turns.iter().any(|t| t.content.is_empty()) {
            return Err(GatewayError::InvalidRequest("empty turn content".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    pub fn final_human_turn(&self) -> &str {
        self.turns
            .iter()
            .rev()
            .find(|t| t.role == Role::Human)
            .map(|t| t.content.as_str())
            .unwrap_or("")
    }

    /// Stable hash identifying this request and sample slot.
    pub fn fingerprint(&self, sample_index: u32) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            provider_id: &'a str,
            model_id: &'a str,
            template_id: &'a str,
            turns: &'a [ChatTurn],
            assistant_prefix: &'a Option<String>,
            temperature: f64,
            max_tokens: u32,
            seed: Option<u64>,
            sample_index: u32,
        }
        let key = Key {
            provider_id: &self.provider_id,
            model_id: &self.model_id,
            template_id: &self.template_id,
            turns: &self.turns,
            assistant_prefix: &self.assistant_prefix,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            sample_index,
        };
        let bytes = serde_json::to_vec(&key).expect("request key serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    /// Plain-text rendering in the `Human:` / `Assistant:` layout.
    pub fn transcript(&self) -> String {
        let mut parts: Vec<String> = self
            .turns
            .iter()
            .map(|t| match t.role {
                Role::Human => format!("Human: {}", t.content),
                Role::Assistant => format!("Assistant: {}", t.content),
            })
            .collect();
        if let Some(prefix) = &self.assistant_prefix {
            parts.push(format!("Assistant: {prefix}"));
        }
        parts.join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub cached: bool,
    pub latency_ms: u64,
    pub request_fingerprint: String,
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("authentication failed: {0}")]
    Auth(String),
    /// A single throttled attempt; retried by the gateway.
    #[error("throttled: {0}")]
    Throttled(String),
    #[error("still throttled after {attempts} attempts")]
    ThrottleExhausted { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted response for request {fingerprint} (template {template_id})")]
    ScriptMissing { fingerprint: String, template_id: String },
    #[error("several scripted fixtures match: {0:?}")]
    AmbiguousMatch(Vec<String>),
    #[error("unknown provider {0:?}")]
    UnknownProvider(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected response: {0}")]
    BadResponse(String),
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Throttled(_) | GatewayError::Transport(_))
    }
}

/// Everything a provider needs to answer one request.
pub struct ProviderCall<'a> {
    pub request: &'a CompletionRequest,
    pub sample_index: u32,
    pub fingerprint: &'a str,
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    async fn complete(&self, call: &ProviderCall<'_>) -> Result<String, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .mul_f64(self.factor.powi(attempt.saturating_sub(1) as i32))
    }
}

pub const DEFAULT_IN_FLIGHT: usize = 8;

pub struct Gateway {
    providers: HashMap<String, Arc<dyn ChatProvider>>,
    cache: ResponseCache,
    limiter: Semaphore,
    in_flight_cap: usize,
    retry: RetryPolicy,
    provider_calls: AtomicU64,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Gateway {
    pub fn new(cache: ResponseCache) -> Self {
        Self {
            providers: HashMap::new(),
            cache,
            limiter: Semaphore::new(DEFAULT_IN_FLIGHT),
            in_flight_cap: DEFAULT_IN_FLIGHT,
            retry: RetryPolicy::default(),
            provider_calls: AtomicU64::new(0),
            key_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_provider(mut self, id: impl Into<String>, provider: Arc<dyn ChatProvider>) -> Self {
        self.providers.insert(id.into(), provider);
        self
    }

    pub fn with_in_flight_cap(mut self, cap: usize) -> Self {
        let cap = cap.max(1);
        self.limiter = Semaphore::new(cap);
        self.in_flight_cap = cap;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn in_flight_cap(&self) -> usize {
        self.in_flight_cap
    }

    /// Requests that actually reached a provider (cache misses).
    pub fn provider_calls(&self) -> u64 {
        self.provider_calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub async fn complete(&self, req: &CompletionRequest, sample_index: u32) -> Result<CompletionResult, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let fingerprint = req.fingerprint(sample_index);
        if let Some(text) = self.cache.get(&fingerprint)? {
            return Ok(self.result(text, true, started, fingerprint));
        }

        // Serialize identical requests so concurrent workers share one call.
        let key_lock = {
            let mut locks = self.key_locks.lock().await;
            locks.entry(fingerprint.clone()).or_default().clone()
        };
        let _guard = key_lock.lock().await;
        if let Some(text) = self.cache.get(&fingerprint)? {
            return Ok(self.result(text, true, started, fingerprint));
        }

        let provider = self
            .providers
            .get(&req.provider_id)
            .ok_or_else(|| GatewayError::UnknownProvider(req.provider_id.clone()))?
            .clone();
        let call = ProviderCall {
            request: req,
            sample_index,
            fingerprint: &fingerprint,
        };
        let mut attempt = 0;
        let text = loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire().await.expect("limiter never closed");
                self.provider_calls.fetch_add(1, Ordering::SeqCst);
                provider.complete(&call).await
            };
            match outcome {
                Ok(text) => break text,
                Err(e) if e.is_retryable() && attempt < self.retry.max_attempts => {
                    tracing::warn!(%fingerprint, attempt, error = %e, "retrying completion");
                    tokio::time::sleep(self.retry.delay(attempt)).await;
                }
                Err(GatewayError::Throttled(_)) => return Err(GatewayError::ThrottleExhausted { attempts: attempt }),
                Err(e) => return Err(e),
            }
        };
        self.cache.put(&fingerprint, &text)?;
        Ok(self.result(text, false, started, fingerprint))
    }

    fn result(&self, text: String, cached: bool, started: Instant, fingerprint: String) -> CompletionResult {
        CompletionResult {
            text,
            cached,
            latency_ms: started.elapsed().as_millis() as u64,
            request_fingerprint: fingerprint,
        }
    }
}
