//! First pass: one-shot extraction of candidate memory entries
//! from a whole session, plus robust parsing of the model's list output.

use serde::{Deserialize, Serialize};

use crate::dialogue::DialogueSession;
use crate::error::{Error, Result};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryStatus {
    /// Produced by the initial whole-session pass; no provenance yet.
    Initial,
    /// Recovered from uncovered turns; coarse provenance (all of D_miss).
    Supplementary,
    /// Survived evidence seeking; grounded in specific turns.
    Verified,
}

/// One extracted fact. `text` is a single self-contained statement with no
/// newlines; `source_turn_indices` is empty until alignment or verification
/// assigns provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: String,
    pub text: String,
    pub status: MemoryStatus,
    pub source_turn_indices: Vec<usize>,
    pub session_id: String,
    pub created_timestamp: String,
}

/// Collapse all whitespace runs (including newlines) to single spaces.
pub fn normalize_fact_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// A memory's timestamp is when the fact was stated: the latest timestamp
/// among its source turns, falling back to the pipeline run time.
pub fn derive_timestamp(
    session: &DialogueSession,
    turn_indices: &[usize],
    run_timestamp: &str,
) -> String {
    let mut best: Option<(chrono::DateTime<chrono::FixedOffset>, &str)> = None;
    for idx in turn_indices {
        let Some(turn) = session.turns.get(*idx) else {
            continue;
        };
        let Some(ts) = &turn.timestamp else { continue };
        let Ok(parsed) = chrono::DateTime::parse_from_rfc3339(ts) else {
            continue;
        };
        if best.map(|(b, _)| parsed > b).unwrap_or(true) {
            best = Some((parsed, ts));
        }
    }
    best.map(|(_, ts)| ts.to_string())
        .unwrap_or_else(|| run_timestamp.to_string())
}

/// Parse a model's fact list. Tries, in order: a JSON array of strings
/// (optionally fenced), numbered/bulleted lines, then one fact per
/// non-empty line. Items are whitespace-normalized; empties are dropped.
/// Zero items from a raw response is an error — the caller must see
/// malformed output, not an empty memory.
pub fn parse_memory_list(raw: &str) -> Result<Vec<String>> {
    let body = strip_code_fence(raw.trim());

    let items: Vec<String> = if let Ok(array) = serde_json::from_str::<Vec<String>>(body) {
        array.iter().map(|s| normalize_fact_text(s)).collect()
    } else {
        body.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let item = strip_list_marker(line).unwrap_or_else(|| line.trim());
                normalize_fact_text(item)
            })
            .collect()
    };

    let items: Vec<String> = items.into_iter().filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(Error::ExtractionFormat {
            raw: raw.to_string(),
        });
    }
    Ok(items)
}

/// `"1."`, `"2)"`, `"-"`, `"*"` prefixes. Returns the item text when the
/// line carries a marker.
fn strip_list_marker(line: &str) -> Option<&str> {
    let trimmed = line.trim_start();
    if trimmed == "-" || trimmed == "*" {
        return Some("");
    }
    if let Some(rest) = trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix("* "))
    {
        return Some(rest.trim());
    }
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let after = &trimmed[digits..];
        if let Some(rest) = after.strip_prefix('.').or_else(|| after.strip_prefix(')')) {
            return Some(rest.trim());
        }
    }
    None
}

fn strip_code_fence(text: &str) -> &str {
    let Some(first_line_end) = text.find('\n') else {
        return text;
    };
    let first_line = &text[..first_line_end];
    if first_line.starts_with("```") && text.ends_with("```") {
        let inner = &text[first_line_end + 1..text.len() - 3];
        inner.trim()
    } else {
        text
    }
}

/// Settings the extraction stage needs from the pipeline.
#[derive(Debug, Clone)]
pub struct ExtractionContext {
    /// Sessions longer than this are split at turn boundaries into
    /// consecutive windows whose results are concatenated.
    pub window_turns: usize,
    pub run_timestamp: String,
}

/// One-pass initial extraction over the full session. Entries preserve
/// response order, exact duplicates (after normalization) collapse to one,
/// and provenance stays empty — alignment assigns it later.
pub async fn extract_initial(
    session: &DialogueSession,
    context: &ExtractionContext,
    gateway: &Gateway,
) -> Result<Vec<MemoryEntry>> {
    if session.turns.is_empty() {
        return Err(Error::Validation(format!(
            "session {:?} has no turns",
            session.session_id
        )));
    }
    let window = context.window_turns.max(1);

    let mut texts: Vec<String> = Vec::new();
    for chunk in session.turns.chunks(window) {
        let payload = crate::dialogue::render_transcript(chunk);
        let response = gateway
            .complete(&ChatRequest::new(prompts::EXTRACT, payload))
            .await?;
        texts.extend(parse_memory_list(&response)?);
    }

    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for text in texts {
        if !seen.insert(text.clone()) {
            continue;
        }
        entries.push(MemoryEntry {
            entry_id: format!("{}:init:{}", session.session_id, entries.len()),
            text,
            status: MemoryStatus::Initial,
            source_turn_indices: Vec::new(),
            session_id: session.session_id.clone(),
            created_timestamp: context.run_timestamp.clone(),
        });
    }
    Ok(entries)
}
