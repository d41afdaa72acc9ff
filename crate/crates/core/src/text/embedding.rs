use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{tokenize, MetricError};
use crate::gateway::RetryPolicy;

/// Dense sentence embedding. Entries are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Returns `None` for an empty vector or non-finite entries.
    pub fn new(values: Vec<f64>) -> Option<Self> {
        (!values.is_empty() && values.iter().all(|v| v.is_finite())).then_some(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[async_trait]
pub trait EmbeddingProvider: Send + Sync {
    /// One vector per text, in order.
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, MetricError>;
}

pub const LOCAL_EMBEDDING_DIM: usize = 512;

/// Hashed bag-of-words counts. Deterministic across runs and platforms.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalHashEmbedding;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl LocalHashEmbedding {
    pub fn embed_one(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; LOCAL_EMBEDDING_DIM];
        for token in tokenize(text).tokens() {
            let slot = (fnv1a(token.as_bytes()) % LOCAL_EMBEDDING_DIM as u64) as usize;
            values[slot] += 1.0;
        }
        EmbeddingVector(values)
    }
}

#[async_trait]
impl EmbeddingProvider for LocalHashEmbedding {
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, MetricError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct RemoteEmbedding {
    client: reqwest::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    batch_size: usize,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl RemoteEmbedding {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
            batch_size: 64,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    async fn send_batch(&self, batch: &[String]) -> Result<Vec<EmbeddingVector>, Attempt> {
        let mut req = self
            .client
            .post(format!("{}/embeddings", self.base_url))
            .json(&EmbeddingRequest {
                model: &self.model,
                input: batch,
            });
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let body: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| Attempt::Fatal(format!("bad embeddings response: {e}")))?;
        if body.data.len() != batch.len() {
            return Err(Attempt::Fatal(format!(
                "expected {} embeddings, got {}",
                batch.len(),
                body.data.len()
            )));
        }
        let mut data = body.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        data.into_iter()
            .map(|d| {
                EmbeddingVector::new(d.embedding).ok_or_else(|| Attempt::Fatal("empty or non-finite embedding".into()))
            })
            .collect()
    }
}

#[async_trait]
impl EmbeddingProvider for RemoteEmbedding {
    async fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, MetricError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let mut attempt = 0;
            loop {
                match self.send_batch(batch).await {
                    Ok(vectors) => {
                        out.extend(vectors);
                        break;
                    }
                    Err(Attempt::Fatal(msg)) => return Err(MetricError::Provider(msg)),
                    Err(Attempt::Retry(msg)) => {
                        attempt += 1;
                        if attempt >= self.retry.max_attempts {
                            return Err(MetricError::Provider(msg));
                        }
                        tokio::time::sleep(self.retry.delay(attempt)).await;
                    }
                }
            }
        }
        Ok(out)
    }
}
