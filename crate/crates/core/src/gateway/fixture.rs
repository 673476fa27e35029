//! Deterministic offline backend.
//!
//! Chat responses are replayed from JSONL fixtures keyed by a content digest
//! of (role prompt, user payload), so a prompt edit invalidates stale
//! fixtures loudly instead of silently replaying them. Embeddings are either
//! replayed from a recorded `{text, vector}` file or synthesized from the
//! text's token multiset — identical text always yields an identical vector.

use std::collections::HashMap;
use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, ChatRequest, EmbeddingVector};
use crate::error::{Error, Result};

/// Content digest a chat fixture is keyed by: SHA-256 over the role prompt
/// and user payload with a 0x1f separator, hex encoded.
pub fn request_digest(role_prompt: &str, user_payload: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(role_prompt.as_bytes());
    hasher.update([0x1f]);
    hasher.update(user_payload.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

// FNV-1a, fixed here so bucket assignment never shifts across toolchains.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Deterministic synthetic embedding: hash each lowercased whitespace token
/// to a bucket in `[0, dimension)`, count occurrences, L2-normalize.
pub fn fixture_embed(text: &str, dimension: usize) -> Result<EmbeddingVector> {
    if dimension == 0 {
        return Err(Error::Validation(
            "fixture embedding dimension must be > 0".into(),
        ));
    }
    let mut buckets = vec![0.0_f64; dimension];
    let mut tokens = 0_usize;
    for token in text.split_whitespace() {
        let token = token.to_lowercase();
        let bucket = (fnv1a64(token.as_bytes()) % dimension as u64) as usize;
        buckets[bucket] += 1.0;
        tokens += 1;
    }
    if tokens == 0 {
        return Err(Error::Validation(format!(
            "cannot embed text with zero tokens: {text:?}"
        )));
    }
    let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut buckets {
        *v /= norm;
    }
    Ok(EmbeddingVector::new(buckets))
}

/// One chat fixture line: `{"digest": hex, "response": str}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatFixture {
    pub digest: String,
    pub response: String,
}

/// One recorded embedding line: `{"text": str, "vector": [real]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingFixture {
    pub text: String,
    pub vector: Vec<f64>,
}

enum EmbedMode {
    Synthetic { dimension: usize },
    Recorded(HashMap<String, EmbeddingVector>),
}

/// Offline [`Backend`]: chat by digest lookup, embeddings recorded or
/// synthetic. A miss is an error carrying what the author needs to fix it,
/// never a silent fallback.
pub struct FixtureBackend {
    chat: HashMap<String, String>,
    embed: EmbedMode,
}

impl FixtureBackend {
    /// Synthetic-embedding backend with no chat fixtures loaded.
    pub fn new(dimension: usize) -> Self {
        Self {
            chat: HashMap::new(),
            embed: EmbedMode::Synthetic { dimension },
        }
    }

    pub fn insert_chat(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.chat.insert(digest.into(), response.into());
    }

    /// Convenience for tests: key the response by (role prompt, payload).
    pub fn insert_chat_for(
        &mut self,
        role_prompt: &str,
        user_payload: &str,
        response: impl Into<String>,
    ) {
        self.insert_chat(request_digest(role_prompt, user_payload), response);
    }

    pub fn load_chat_fixtures(&mut self, path: &Path) -> Result<usize> {
        let origin = path.display().to_string();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading chat fixtures {origin}"), e))?;
        let mut loaded = 0;
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fixture: ChatFixture = serde_json::from_str(line).map_err(|e| Error::Parse {
                origin: origin.clone(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            if fixture.digest.len() != 64 || !fixture.digest.bytes().all(|b| b.is_ascii_hexdigit())
            {
                return Err(Error::Schema {
                    origin: origin.clone(),
                    message: format!("line {}: digest is not 64 hex chars", idx + 1),
                });
            }
            if let Some(existing) = self.chat.get(&fixture.digest) {
                if *existing != fixture.response {
                    return Err(Error::Schema {
                        origin: origin.clone(),
                        message: format!(
                            "line {}: digest {} already has a different response",
                            idx + 1,
                            fixture.digest
                        ),
                    });
                }
                continue;
            }
            self.chat.insert(fixture.digest, fixture.response);
            loaded += 1;
        }
        Ok(loaded)
    }

    /// Switch embeddings to recorded mode, replaying vectors from a
    /// `{text, vector}` JSONL file. Texts not in the file become errors.
    pub fn load_embedding_fixtures(&mut self, path: &Path) -> Result<usize> {
        let origin = path.display().to_string();
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading embedding fixtures {origin}"), e))?;
        let mut map =
            match std::mem::replace(&mut self.embed, EmbedMode::Synthetic { dimension: 1 }) {
                EmbedMode::Recorded(map) => map,
                EmbedMode::Synthetic { .. } => HashMap::new(),
            };
        let mut loaded = 0;
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fixture: EmbeddingFixture =
                serde_json::from_str(line).map_err(|e| Error::Parse {
                    origin: origin.clone(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            map.insert(fixture.text, EmbeddingVector::new(fixture.vector));
            loaded += 1;
        }
        self.embed = EmbedMode::Recorded(map);
        Ok(loaded)
    }
}

#[async_trait]
impl Backend for FixtureBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String> {
        let digest = request_digest(&request.role_prompt, &request.user_payload);
        self.chat
            .get(&digest)
            .cloned()
            .ok_or(Error::FixtureMiss { digest })
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        match &self.embed {
            EmbedMode::Synthetic { dimension } => {
                texts.iter().map(|t| fixture_embed(t, *dimension)).collect()
            }
            EmbedMode::Recorded(map) => texts
                .iter()
                .map(|t| {
                    map.get(t).cloned().ok_or_else(|| Error::FixtureMiss {
                        digest: format!("embedding:{}", request_digest("embedding", t)),
                    })
                })
                .collect(),
        }
    }
}
