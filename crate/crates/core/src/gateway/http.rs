//! Live backend speaking the OpenAI-compatible chat-completions and
//! embeddings HTTP JSON protocol. Any model servable behind that protocol
//! (hosted or local) works without code changes.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use super::{Backend, BackendConfig, ChatRequest, EmbeddingVector};
use crate::error::{Error, Result};

const RETRY_BASE_DELAY: Duration = Duration::from_millis(200);

pub struct HttpBackend {
    config: BackendConfig,
    client: reqwest::Client,
    api_key: Option<String>,
    in_flight: Semaphore,
    reported_tokens: AtomicU64,
    usage_seen: AtomicU64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    total_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedDatum>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct EmbedDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self> {
        config.validate()?;
        let api_key = if config.api_key_env_var.is_empty() {
            None
        } else {
            match std::env::var(&config.api_key_env_var) {
                Ok(key) if !key.is_empty() => Some(key),
                _ => {
                    return Err(Error::Config(format!(
                        "environment variable {} is not set (named by api_key_env_var)",
                        config.api_key_env_var
                    )))
                }
            }
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("building http client: {e}")))?;
        let in_flight = Semaphore::new(config.max_in_flight);
        Ok(Self {
            config,
            client,
            api_key,
            in_flight,
            reported_tokens: AtomicU64::new(0),
            usage_seen: AtomicU64::new(0),
        })
    }

    /// POST with retries on transport failures, 429 and 5xx, backing off
    /// exponentially from 200ms. Other statuses fail immediately.
    async fn post_json(&self, url: &str, body: serde_json::Value) -> Result<serde_json::Value> {
        let _permit = self
            .in_flight
            .acquire()
            .await
            .expect("semaphore never closed");
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                tokio::time::sleep(RETRY_BASE_DELAY * 2_u32.pow(attempt - 1)).await;
            }
            let mut request = self.client.post(url).json(&body);
            if let Some(key) = &self.api_key {
                request = request.bearer_auth(key);
            }
            match request.send().await {
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response.json().await.map_err(|e| {
                            Error::BackendProtocol(format!("decoding response from {url}: {e}"))
                        });
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let body = response.text().await.unwrap_or_default();
                    last_error = format!("{url} returned {status}: {}", truncate(&body, 300));
                    if !retryable {
                        return Err(Error::BackendUnavailable(last_error));
                    }
                }
                Err(e) => {
                    last_error = format!("{url}: {e}");
                }
            }
        }
        Err(Error::BackendUnavailable(format!(
            "{last_error} (after {} attempts)",
            self.config.max_retries + 1
        )))
    }

    fn record_usage(&self, usage: &Option<Usage>) {
        if let Some(Usage {
            total_tokens: Some(n),
        }) = usage
        {
            self.reported_tokens.fetch_add(*n, Ordering::Relaxed);
            self.usage_seen.fetch_add(1, Ordering::Relaxed);
        }
    }
}

fn truncate(text: &str, max: usize) -> &str {
    match text.char_indices().nth(max) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

#[async_trait]
impl Backend for HttpBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String> {
        let body = json!({
            "model": self.config.chat_model_name,
            "messages": [
                {"role": "system", "content": request.role_prompt},
                {"role": "user", "content": request.user_payload},
            ],
            "temperature": request.temperature,
        });
        let value = self.post_json(&self.config.chat_endpoint, body).await?;
        let response: ChatResponse = serde_json::from_value(value)
            .map_err(|e| Error::BackendProtocol(format!("chat response shape: {e}")))?;
        self.record_usage(&response.usage);
        response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::BackendProtocol("chat response has no message content".into()))
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({
            "model": self.config.embed_model_name,
            "input": texts,
        });
        let value = self.post_json(&self.config.embed_endpoint, body).await?;
        let response: EmbedResponse = serde_json::from_value(value)
            .map_err(|e| Error::BackendProtocol(format!("embeddings response shape: {e}")))?;
        self.record_usage(&response.usage);
        if response.data.len() != texts.len() {
            return Err(Error::BackendProtocol(format!(
                "requested {} embeddings, got {}",
                texts.len(),
                response.data.len()
            )));
        }
        let mut data = response.data;
        data.sort_by_key(|d| d.index);
        Ok(data
            .into_iter()
            .map(|d| EmbeddingVector::new(d.embedding))
            .collect())
    }

    fn reported_tokens(&self) -> Option<u64> {
        if self.usage_seen.load(Ordering::Relaxed) == 0 {
            None
        } else {
            Some(self.reported_tokens.load(Ordering::Relaxed))
        }
    }
}
