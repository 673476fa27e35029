//! Per-owner persistence of final memories, plus retrieval-backed QA.
//!
//! Stores are flat single-file JSON artifacts — diffable, desk-scale.
//! Retrieval embeds raw entry text; the timestamp annotation is applied
//! only when rendering memories into the answer prompt.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::completion::cosine_similarity;
use crate::error::{Error, Result};
use crate::extraction::{MemoryEntry, MemoryStatus};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn default_retrieval_k() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub owner_id: String,
    pub created_at: String,
    pub pipeline_version: String,
    pub entries: Vec<MemoryEntry>,
}

impl MemoryStore {
    pub fn new(
        owner_id: impl Into<String>,
        created_at: impl Into<String>,
        entries: Vec<MemoryEntry>,
    ) -> Result<Self> {
        let store = Self {
            owner_id: owner_id.into(),
            created_at: created_at.into(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            entries,
        };
        store.validate("in-memory store")?;
        Ok(store)
    }

    pub fn validate(&self, origin: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for entry in &self.entries {
            if !seen.insert(&entry.entry_id) {
                return Err(Error::Schema {
                    origin: origin.to_string(),
                    message: format!("duplicate entry_id {:?}", entry.entry_id),
                });
            }
            if entry.text.trim().is_empty() {
                return Err(Error::Schema {
                    origin: origin.to_string(),
                    message: format!("entry {:?} has empty text", entry.entry_id),
                });
            }
            if entry.text.contains('\n') {
                return Err(Error::Schema {
                    origin: origin.to_string(),
                    message: format!(
                        "entry {:?} contains a newline (field text must be one normalized fact)",
                        entry.entry_id
                    ),
                });
            }
            if entry.status == MemoryStatus::Verified && entry.source_turn_indices.is_empty() {
                return Err(Error::Schema {
                    origin: origin.to_string(),
                    message: format!(
                        "verified entry {:?} has no source turns (field source_turn_indices)",
                        entry.entry_id
                    ),
                });
            }
        }
        Ok(())
    }
}

fn version_major(version: &str) -> Option<&str> {
    version.split('.').next().filter(|major| !major.is_empty())
}

/// Canonical pretty JSON with a trailing newline; key order is the struct
/// field order, so identical stores serialize byte-identically.
pub fn store_to_json(store: &MemoryStore) -> String {
    let mut json = serde_json::to_string_pretty(store).expect("store serializes");
    json.push('\n');
    json
}

pub fn save_store(store: &MemoryStore, path: &Path) -> Result<()> {
    store.validate(&path.display().to_string())?;
    std::fs::write(path, store_to_json(store))
        .map_err(|e| Error::io(format!("writing store {}", path.display()), e))
}

pub fn load_store(path: &Path) -> Result<MemoryStore> {
    let origin = path.display().to_string();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading store {origin}"), e))?;
    let store: MemoryStore = serde_json::from_str(&raw).map_err(|e| Error::Schema {
        origin: origin.clone(),
        message: e.to_string(),
    })?;
    let current_major = version_major(PIPELINE_VERSION).expect("crate version has a major");
    match version_major(&store.pipeline_version) {
        Some(major) if major == current_major => {}
        _ => {
            return Err(Error::Schema {
                origin,
                message: format!(
                    "unsupported pipeline_version {:?} (this build reads major {current_major})",
                    store.pipeline_version
                ),
            })
        }
    }
    store.validate(&origin)?;
    Ok(store)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedMemory {
    pub entry_id: String,
    pub score: f64,
    /// `"[<created_timestamp>] <text>"` — what the answer prompt sees.
    pub annotated_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub ranked: Vec<RankedMemory>,
}

/// Rank entries by cosine similarity to the query, descending, ties broken
/// by insertion order, truncated to `k`.
pub async fn retrieve_top_k(
    store: &MemoryStore,
    query: &str,
    k: usize,
    gateway: &Gateway,
) -> Result<RetrievalResult> {
    if query.trim().is_empty() {
        return Err(Error::Validation("retrieval query is empty".into()));
    }
    if k == 0 {
        return Err(Error::Validation("retrieval k must be positive".into()));
    }
    if store.entries.is_empty() {
        return Ok(RetrievalResult { ranked: Vec::new() });
    }
    let query_vector = gateway.embed(query).await?;
    let texts: Vec<String> = store.entries.iter().map(|e| e.text.clone()).collect();
    let vectors = gateway.embed_batch(&texts).await?;

    let mut scored: Vec<(usize, f64)> = Vec::with_capacity(vectors.len());
    for (idx, vector) in vectors.iter().enumerate() {
        scored.push((idx, cosine_similarity(&query_vector, vector)?));
    }
    // Stable sort keeps insertion order on equal scores.
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("cosine scores are finite"));

    Ok(RetrievalResult {
        ranked: scored
            .into_iter()
            .take(k)
            .map(|(idx, score)| {
                let entry = &store.entries[idx];
                RankedMemory {
                    entry_id: entry.entry_id.clone(),
                    score,
                    annotated_text: format!("[{}] {}", entry.created_timestamp, entry.text),
                }
            })
            .collect(),
    })
}

/// Answer a question from the top-k retrieved memories in one chat call.
/// An empty store still answers, with the prompt stating no memory exists.
pub async fn answer_question(
    store: &MemoryStore,
    question: &str,
    k: usize,
    gateway: &Gateway,
) -> Result<String> {
    if question.trim().is_empty() {
        return Err(Error::Validation("question is empty".into()));
    }
    let retrieval = retrieve_top_k(store, question, k.max(1), gateway).await?;
    let memories = if retrieval.ranked.is_empty() {
        "(no relevant memory found for this user)".to_string()
    } else {
        retrieval
            .ranked
            .iter()
            .map(|m| format!("- {}", m.annotated_text))
            .collect::<Vec<_>>()
            .join("\n")
    };
    let payload = format!("Memories:\n{memories}\n\nQuestion: {question}");
    gateway
        .complete(&ChatRequest::new(prompts::ANSWER, payload))
        .await
}
