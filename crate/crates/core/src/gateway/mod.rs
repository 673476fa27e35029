//! The single boundary to chat and embedding models.
//!
//! Every model interaction in the pipeline flows through [`Gateway`], which
//! wraps a [`Backend`] (live HTTP or deterministic fixture) with call
//! accounting and a per-run embedding cache. Tests can snapshot the counters
//! to assert total call volume.

mod fixture;
mod http;

pub use fixture::{fixture_embed, request_digest, ChatFixture, EmbeddingFixture, FixtureBackend};
pub use http::HttpBackend;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One chat call: a system role prompt plus the user payload.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub role_prompt: String,
    pub user_payload: String,
    pub temperature: f64,
}

impl ChatRequest {
    /// Temperature defaults to 0: the pipeline is deterministic per pass.
    pub fn new(role_prompt: impl Into<String>, user_payload: impl Into<String>) -> Self {
        Self {
            role_prompt: role_prompt.into(),
            user_payload: user_payload.into(),
            temperature: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.role_prompt.trim().is_empty() {
            return Err(Error::Validation(
                "chat request has empty role prompt".into(),
            ));
        }
        if self.user_payload.trim().is_empty() {
            return Err(Error::Validation(
                "chat request has empty user payload".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed-dimension real vector. All vectors produced in one run share a
/// dimension; the gateway rejects zero vectors and dimension drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

fn default_timeout_secs() -> u64 {
    60
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_in_flight() -> usize {
    8
}

/// Connection settings for a live OpenAI-compatible backend. Model names
/// are configuration, not code; the API key is read from the named
/// environment variable and never from file contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub chat_endpoint: String,
    pub embed_endpoint: String,
    pub api_key_env_var: String,
    pub chat_model_name: String,
    pub embed_model_name: String,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Maximum concurrent in-flight live requests.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.request_timeout_secs == 0 {
            return Err(Error::Config("request_timeout_secs must be > 0".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be > 0".into()));
        }
        if self.chat_endpoint.is_empty() || self.embed_endpoint.is_empty() {
            return Err(Error::Config(
                "chat_endpoint and embed_endpoint are required".into(),
            ));
        }
        Ok(())
    }
}

/// A chat + embedding provider. Implementations: [`HttpBackend`] (live),
/// [`FixtureBackend`] (recorded/deterministic), plus test doubles.
#[async_trait]
pub trait Backend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<String>;

    /// One vector per text, order preserving, all the same dimension.
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    /// Total tokens reported by the provider, when it reports usage.
    fn reported_tokens(&self) -> Option<u64> {
        None
    }
}

/// Counters for everything that actually reached the backend.
/// Cache hits are free and are not counted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    pub chat_calls: u64,
    pub embed_requests: u64,
    pub embed_texts: u64,
    /// Characters sent (role prompts, payloads, embedded texts): the
    /// token-budget proxy.
    pub payload_chars: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reported_tokens: Option<u64>,
}

#[derive(Default)]
struct StatCells {
    chat_calls: AtomicU64,
    embed_requests: AtomicU64,
    embed_texts: AtomicU64,
    payload_chars: AtomicU64,
}

/// Accounting + caching wrapper around a [`Backend`]. Construct one per
/// pipeline run: the embedding cache is run-scoped (each distinct text is
/// embedded once per run) and the counters describe exactly that run.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    stats: StatCells,
    /// Lock held across the backend call so cache-miss accounting stays
    /// exact when sessions run concurrently.
    embed_cache: tokio::sync::Mutex<HashMap<String, EmbeddingVector>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            stats: StatCells::default(),
            embed_cache: tokio::sync::Mutex::new(HashMap::new()),
        }
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        self.stats.chat_calls.fetch_add(1, Ordering::Relaxed);
        self.stats.payload_chars.fetch_add(
            (request.role_prompt.chars().count() + request.user_payload.chars().count()) as u64,
            Ordering::Relaxed,
        );
        self.backend.complete(request).await
    }

    pub async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        if texts.is_empty() {
            return Err(Error::Validation(
                "embed_batch called with empty input list".into(),
            ));
        }
        for text in texts {
            if text.trim().is_empty() {
                return Err(Error::Validation(
                    "embed_batch input contains an empty text".into(),
                ));
            }
        }

        let mut cache = self.embed_cache.lock().await;
        let mut missing: Vec<String> = Vec::new();
        for text in texts {
            if !cache.contains_key(text) && !missing.contains(text) {
                missing.push(text.clone());
            }
        }
        if !missing.is_empty() {
            self.stats.embed_requests.fetch_add(1, Ordering::Relaxed);
            self.stats
                .embed_texts
                .fetch_add(missing.len() as u64, Ordering::Relaxed);
            self.stats.payload_chars.fetch_add(
                missing
                    .iter()
                    .map(|t| t.chars().count() as u64)
                    .sum::<u64>(),
                Ordering::Relaxed,
            );
            let vectors = self.backend.embed_batch(&missing).await?;
            if vectors.len() != missing.len() {
                return Err(Error::BackendProtocol(format!(
                    "requested {} embeddings, backend returned {}",
                    missing.len(),
                    vectors.len()
                )));
            }
            let expected_dim = cache
                .values()
                .next()
                .map(EmbeddingVector::dimension)
                .unwrap_or_else(|| vectors[0].dimension());
            for (text, vector) in missing.iter().zip(vectors) {
                if vector.dimension() == 0 {
                    return Err(Error::BackendProtocol(
                        "backend returned an empty vector".into(),
                    ));
                }
                if vector.dimension() != expected_dim {
                    return Err(Error::BackendProtocol(format!(
                        "embedding dimension drift: expected {}, got {}",
                        expected_dim,
                        vector.dimension()
                    )));
                }
                if vector.is_zero() {
                    return Err(Error::BackendProtocol(format!(
                        "backend returned a zero vector for text {text:?}"
                    )));
                }
                cache.insert(text.clone(), vector);
            }
        }
        Ok(texts
            .iter()
            .map(|t| cache.get(t).expect("filled above").clone())
            .collect())
    }

    pub async fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut out = self
            .embed_batch(std::slice::from_ref(&text.to_string()))
            .await?;
        Ok(out.pop().expect("one vector for one text"))
    }

    pub fn stats(&self) -> CallStats {
        CallStats {
            chat_calls: self.stats.chat_calls.load(Ordering::Relaxed),
            embed_requests: self.stats.embed_requests.load(Ordering::Relaxed),
            embed_texts: self.stats.embed_texts.load(Ordering::Relaxed),
            payload_chars: self.stats.payload_chars.load(Ordering::Relaxed),
            reported_tokens: self.backend.reported_tokens(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct CountingBackend {
        calls: AtomicU64,
    }

    #[async_trait]
    impl Backend for CountingBackend {
        async fn complete(&self, _request: &ChatRequest) -> Result<String> {
            Ok("ok".into())
        }
        async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(texts
                .iter()
                .map(|t| EmbeddingVector::new(vec![t.len() as f64, 1.0]))
                .collect())
        }
    }

    #[tokio::test]
    async fn embed_cache_dedups_within_and_across_batches() {
        let backend = Arc::new(CountingBackend {
            calls: AtomicU64::new(0),
        });
        let gateway = Gateway::new(backend.clone());

        let batch = vec!["a".to_string(), "b".to_string(), "a".to_string()];
        let out = gateway.embed_batch(&batch).await.unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0], out[2]);
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);

        // Fully cached batch: no backend call at all.
        gateway.embed_batch(&batch).await.unwrap();
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);

        let stats = gateway.stats();
        assert_eq!(stats.embed_requests, 1);
        assert_eq!(stats.embed_texts, 2);
    }

    #[tokio::test]
    async fn empty_inputs_rejected() {
        let gateway = Gateway::new(Arc::new(CountingBackend {
            calls: AtomicU64::new(0),
        }));
        assert!(matches!(
            gateway.embed_batch(&[]).await.unwrap_err(),
            Error::Validation(_)
        ));
        assert!(matches!(
            gateway.embed_batch(&["".to_string()]).await.unwrap_err(),
            Error::Validation(_)
        ));
        let req = ChatRequest::new("", "payload");
        assert!(matches!(
            gateway.complete(&req).await.unwrap_err(),
            Error::Validation(_)
        ));
    }

    struct ZeroVectorBackend;

    #[async_trait]
    impl Backend for ZeroVectorBackend {
        async fn complete(&self, _request: &ChatRequest) -> Result<String> {
            Ok(String::new())
        }
        async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts
                .iter()
                .map(|_| EmbeddingVector::new(vec![0.0, 0.0]))
                .collect())
        }
    }

    #[tokio::test]
    async fn zero_vector_is_a_protocol_error() {
        let gateway = Gateway::new(Arc::new(ZeroVectorBackend));
        let err = gateway.embed_batch(&["x".to_string()]).await.unwrap_err();
        assert!(matches!(err, Error::BackendProtocol(_)), "{err:?}");
    }
}
