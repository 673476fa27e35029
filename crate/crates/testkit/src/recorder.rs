//! Record chat traffic flowing through a backend, keyed by request digest,
//! for writing replayable fixture files.

use std::collections::BTreeMap;
use std::sync::Arc;

use async_trait::async_trait;
use memloop_core::error::Result;
use memloop_core::gateway::{request_digest, Backend, ChatFixture, ChatRequest, EmbeddingVector};

pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    // BTreeMap so dumps are digest-sorted and byte-stable across runs.
    chat: std::sync::Mutex<BTreeMap<String, String>>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>) -> Self {
        Self {
            inner,
            chat: std::sync::Mutex::new(BTreeMap::new()),
        }
    }

    pub fn chat_fixtures(&self) -> Vec<ChatFixture> {
        self.chat
            .lock()
            .expect("recorder lock")
            .iter()
            .map(|(digest, response)| ChatFixture {
                digest: digest.clone(),
                response: response.clone(),
            })
            .collect()
    }

    pub fn chat_fixtures_jsonl(&self) -> String {
        self.chat_fixtures()
            .iter()
            .map(|f| serde_json::to_string(f).expect("fixture serializes") + "\n")
            .collect()
    }
}

#[async_trait]
impl Backend for RecordingBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String> {
        let response = self.inner.complete(request).await?;
        let digest = request_digest(&request.role_prompt, &request.user_payload);
        let mut chat = self.chat.lock().expect("recorder lock");
        if let Some(existing) = chat.get(&digest) {
            assert_eq!(
                existing, &response,
                "recorder: digest {digest} produced two different responses"
            );
        } else {
            chat.insert(digest, response.clone());
        }
        Ok(response)
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.inner.embed_batch(texts).await
    }
}
