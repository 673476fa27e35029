//! Context-alignment phase: map entries back to turns by cosine
//! similarity, flag uncovered turns, re-extract from them, and merge the
//! supplementary facts into the candidate set.

use serde::{Deserialize, Serialize};

use crate::dialogue::{render_transcript, turn_text_for_embedding, DialogueSession, DialogueTurn};
use crate::error::{Error, Result};
use crate::extraction::{self, MemoryEntry, MemoryStatus};
use crate::gateway::{ChatRequest, EmbeddingVector, Gateway};
use crate::prompts;

pub fn default_tau_match() -> f64 {
    0.6
}

fn default_rounds() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompletionConfig {
    /// Coverage threshold: a turn counts as covered only when its best
    /// similarity strictly exceeds this.
    #[serde(default = "default_tau_match")]
    pub tau_match: f64,
    /// Recovery rounds. One align-and-recover pass is the endorsed
    /// behavior; higher values re-align the merged candidates and mine
    /// whatever is still uncovered.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            tau_match: default_tau_match(),
            rounds: default_rounds(),
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_match) {
            return Err(Error::Config(format!(
                "tau_match must be within [-1, 1], got {}",
                self.tau_match
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("completion rounds must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-turn coverage row. `covered == (best_score > tau_match)` always;
/// with no entries, `best_score` is the -1 sentinel and there is no best
/// entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRow {
    pub turn_index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_entry_id: Option<String>,
    pub best_score: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub per_turn: Vec<AlignmentRow>,
    pub tau_match: f64,
}

/// `dot(a,b) / (‖a‖·‖b‖)`, clamped to [-1, 1] against float overshoot.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dimension() != b.dimension() {
        return Err(Error::Validation(format!(
            "cosine similarity dimension mismatch: {} vs {}",
            a.dimension(),
            b.dimension()
        )));
    }
    if a.is_zero() || b.is_zero() {
        return Err(Error::Validation(
            "cosine similarity is undefined for a zero vector".into(),
        ));
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.values.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((dot / (norm_a * norm_b)).clamp(-1.0, 1.0))
}

/// For each turn, find its best entry and decide coverage. Every covered
/// turn's index is appended to its best entry's `source_turn_indices`
/// (provenance backfill), which also refreshes that entry's timestamp.
pub async fn align(
    entries: &mut [MemoryEntry],
    session: &DialogueSession,
    config: &CompletionConfig,
    gateway: &Gateway,
    run_timestamp: &str,
) -> Result<AlignmentReport> {
    config.validate()?;
    let mut per_turn = Vec::with_capacity(session.turns.len());

    if entries.is_empty() {
        for turn in &session.turns {
            per_turn.push(AlignmentRow {
                turn_index: turn.turn_index,
                best_entry_id: None,
                best_score: -1.0,
                covered: false,
            });
        }
        return Ok(AlignmentReport {
            per_turn,
            tau_match: config.tau_match,
        });
    }

    let turn_texts: Vec<String> = session.turns.iter().map(turn_text_for_embedding).collect();
    let entry_texts: Vec<String> = entries.iter().map(|e| e.text.clone()).collect();
    let turn_vectors = gateway.embed_batch(&turn_texts).await?;
    let entry_vectors = gateway.embed_batch(&entry_texts).await?;

    for (turn, turn_vector) in session.turns.iter().zip(&turn_vectors) {
        let mut best_idx = 0usize;
        let mut best_score = f64::NEG_INFINITY;
        for (idx, entry_vector) in entry_vectors.iter().enumerate() {
            let score = cosine_similarity(turn_vector, entry_vector)?;
            // Ties break toward the earlier entry: strict '>' keeps it.
            if score > best_score {
                best_score = score;
                best_idx = idx;
            }
        }
        let covered = best_score > config.tau_match;
        if covered {
            let entry = &mut entries[best_idx];
            if !entry.source_turn_indices.contains(&turn.turn_index) {
                entry.source_turn_indices.push(turn.turn_index);
                entry.source_turn_indices.sort_unstable();
                entry.created_timestamp = extraction::derive_timestamp(
                    session,
                    &entry.source_turn_indices,
                    run_timestamp,
                );
            }
        }
        per_turn.push(AlignmentRow {
            turn_index: turn.turn_index,
            best_entry_id: Some(entries[best_idx].entry_id.clone()),
            best_score,
            covered,
        });
    }
    Ok(AlignmentReport {
        per_turn,
        tau_match: config.tau_match,
    })
}

/// The uncovered turns, in turn order: D_miss.
pub fn find_uncovered_turns(
    report: &AlignmentReport,
    session: &DialogueSession,
) -> Result<Vec<DialogueTurn>> {
    if report.per_turn.len() != session.turns.len()
        || report
            .per_turn
            .iter()
            .zip(&session.turns)
            .any(|(row, turn)| row.turn_index != turn.turn_index)
    {
        return Err(Error::Validation(
            "alignment report does not correspond to this session".into(),
        ));
    }
    Ok(report
        .per_turn
        .iter()
        .zip(&session.turns)
        .filter(|(row, _)| !row.covered)
        .map(|(_, turn)| turn.clone())
        .collect())
}

/// Targeted secondary extraction over D_miss: one chat call over the
/// concatenated uncovered turns. Entries get coarse provenance — every
/// index in D_miss — refined later by verification. `id_offset` keeps
/// supplementary ids unique when recovery runs more than one round.
pub async fn recover_missing(
    d_miss: &[DialogueTurn],
    session: &DialogueSession,
    gateway: &Gateway,
    run_timestamp: &str,
    id_offset: usize,
) -> Result<Vec<MemoryEntry>> {
    if d_miss.is_empty() {
        return Ok(Vec::new());
    }
    let payload = render_transcript(d_miss);
    let response = gateway
        .complete(&ChatRequest::new(prompts::SUPPLEMENT, payload))
        .await?;
    let texts = extraction::parse_memory_list(&response)?;
    let indices: Vec<usize> = d_miss.iter().map(|t| t.turn_index).collect();
    let timestamp = extraction::derive_timestamp(session, &indices, run_timestamp);

    let mut seen = std::collections::HashSet::new();
    let mut entries: Vec<MemoryEntry> = Vec::new();
    for text in texts {
        if !seen.insert(text.clone()) {
            continue;
        }
        entries.push(MemoryEntry {
            entry_id: format!("{}:supp:{}", session.session_id, id_offset + entries.len()),
            text,
            status: MemoryStatus::Supplementary,
            source_turn_indices: indices.clone(),
            session_id: session.session_id.clone(),
            created_timestamp: timestamp.clone(),
        });
    }
    Ok(entries)
}

/// M_cand = M_init ∪ M_supp: initial entries first, then supplementary,
/// with exact-text collisions resolved in favor of the initial entry.
pub fn merge_candidates(m_init: Vec<MemoryEntry>, m_supp: Vec<MemoryEntry>) -> Vec<MemoryEntry> {
    let mut merged = m_init;
    let existing: std::collections::HashSet<String> =
        merged.iter().map(|e| e.text.clone()).collect();
    for entry in m_supp {
        if !existing.contains(&entry.text) {
            merged.push(entry);
        }
    }
    merged
}
