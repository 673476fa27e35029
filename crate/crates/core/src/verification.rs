//! The feedback loop: generate a probing question per candidate,
//! judge the dialogue for evidence, rewrite grounded entries, discard
//! hallucinations, and dedup the survivors.

use serde::{Deserialize, Serialize};

use crate::completion::cosine_similarity;
use crate::dialogue::DialogueSession;
use crate::error::{Error, Result};
use crate::extraction::{self, MemoryEntry, MemoryStatus};
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;

pub fn default_tau_sim() -> f64 {
    0.8
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationConfig {
    /// Deduplication threshold comparing a grounded rewrite to its origin
    /// (and, in the global pass, surviving entries to each other).
    #[serde(default = "default_tau_sim")]
    pub tau_sim: f64,
}

impl Default for VerificationConfig {
    fn default() -> Self {
        Self {
            tau_sim: default_tau_sim(),
        }
    }
}

impl VerificationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            return Err(Error::Config(format!(
                "tau_sim must be within [-1, 1], got {}",
                self.tau_sim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeQuestion {
    pub entry_id: String,
    pub question_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerdictOutcome {
    Hallucination,
    EvidenceFound,
}

/// Outcome of evidence seeking. `grounded_text` and `evidence_turn_indices`
/// are present exactly when evidence was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationVerdict {
    pub entry_id: String,
    pub outcome: VerdictOutcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded_text: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence_turn_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeAction {
    /// Rewrite agrees with the origin: keep the grounded version.
    KeepNewDropOriginal,
    /// Origin was partially incorrect: the rewrite is a correction.
    ReplaceOriginalWithNew,
    /// No evidence: the entry was a hallucination.
    DiscardBoth,
}

/// What happened to one candidate, with both texts so rewrite drift stays
/// inspectable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryAction {
    pub entry_id: String,
    pub action: EntryDisposition,
    pub original_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grounded_text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence_turn_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryDisposition {
    KeptNew,
    Replaced,
    DiscardedHallucination,
    /// Judge or question output was undecodable; the entry is retained
    /// with its pre-verification status so a parser bug cannot masquerade
    /// as hallucination detection.
    RetainedUnverified,
    /// Dropped by the global pass: too similar to an earlier survivor.
    DroppedDuplicate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub actions: Vec<EntryAction>,
    pub warnings: Vec<String>,
}

/// One chat call asking for the probing question behind an entry. The
/// response is trimmed and gets a '?' appended if the model forgot one.
pub async fn generate_question(entry: &MemoryEntry, gateway: &Gateway) -> Result<ProbeQuestion> {
    let response = gateway
        .complete(&ChatRequest::new(prompts::QUESTION, entry.text.clone()))
        .await?;
    let mut question = extraction::normalize_fact_text(&response);
    if question.is_empty() {
        return Err(Error::VerificationFormat(format!(
            "empty question for entry {}",
            entry.entry_id
        )));
    }
    if !question.ends_with('?') {
        question.push('?');
    }
    Ok(ProbeQuestion {
        entry_id: entry.entry_id.clone(),
        question_text: question,
    })
}

#[derive(Deserialize)]
struct JudgeEnvelope {
    found: serde_json::Value,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    turns: Option<Vec<usize>>,
}

fn parse_yes_no(value: &serde_json::Value) -> Option<bool> {
    match value {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => match s.to_ascii_lowercase().as_str() {
            "yes" | "true" => Some(true),
            "no" | "false" => Some(false),
            _ => None,
        },
        _ => None,
    }
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    if trimmed.starts_with("```") && trimmed.ends_with("```") {
        if let Some(start) = trimmed.find('\n') {
            return trimmed[start + 1..trimmed.len() - 3].trim();
        }
    }
    trimmed
}

/// One judge call over the probing question and the full session. The
/// judge answers in a structured envelope `{found, answer?, turns?}` which
/// is decoded into a verdict; anything undecodable is a format error for
/// the caller to handle.
pub async fn seek_evidence(
    question: &ProbeQuestion,
    session: &DialogueSession,
    gateway: &Gateway,
) -> Result<VerificationVerdict> {
    let payload = format!(
        "Question: {}\n\nDialogue:\n{}",
        question.question_text,
        session.transcript()
    );
    let response = gateway
        .complete(&ChatRequest::new(prompts::JUDGE, payload))
        .await?;
    let body = strip_code_fence(&response);
    let envelope: JudgeEnvelope = serde_json::from_str(body).map_err(|e| {
        Error::VerificationFormat(format!(
            "judge envelope for {} is not valid JSON ({e}): {response:?}",
            question.entry_id
        ))
    })?;
    let found = parse_yes_no(&envelope.found).ok_or_else(|| {
        Error::VerificationFormat(format!(
            "judge envelope for {} has non-yes/no found field: {:?}",
            question.entry_id, envelope.found
        ))
    })?;

    if !found {
        return Ok(VerificationVerdict {
            entry_id: question.entry_id.clone(),
            outcome: VerdictOutcome::Hallucination,
            grounded_text: None,
            evidence_turn_indices: Vec::new(),
        });
    }

    let answer = envelope
        .answer
        .as_deref()
        .map(extraction::normalize_fact_text)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| {
            Error::VerificationFormat(format!(
                "judge found evidence for {} but gave no answer",
                question.entry_id
            ))
        })?;
    let mut turns = envelope.turns.unwrap_or_default();
    turns.sort_unstable();
    turns.dedup();
    if turns.is_empty() {
        return Err(Error::VerificationFormat(format!(
            "judge found evidence for {} but cited no turns",
            question.entry_id
        )));
    }
    let max_index = session.turns.len();
    if turns.iter().any(|t| *t >= max_index) {
        return Err(Error::VerificationFormat(format!(
            "judge cited turn indices {turns:?} outside session {:?} (len {max_index})",
            session.session_id
        )));
    }

    Ok(VerificationVerdict {
        entry_id: question.entry_id.clone(),
        outcome: VerdictOutcome::EvidenceFound,
        grounded_text: Some(answer),
        evidence_turn_indices: turns,
    })
}

/// Decide what survives for one (origin, verdict) pair, per the
/// keep / replace / discard rules. In both evidence cases the survivor is
/// the grounded rewrite with verified status and evidence provenance.
pub async fn dedup_merge(
    original: &MemoryEntry,
    verdict: &VerificationVerdict,
    config: &VerificationConfig,
    session: &DialogueSession,
    gateway: &Gateway,
    run_timestamp: &str,
) -> Result<(MergeAction, Option<MemoryEntry>)> {
    config.validate()?;
    if verdict.entry_id != original.entry_id {
        return Err(Error::Validation(format!(
            "verdict {} does not belong to entry {}",
            verdict.entry_id, original.entry_id
        )));
    }
    match verdict.outcome {
        VerdictOutcome::Hallucination => Ok((MergeAction::DiscardBoth, None)),
        VerdictOutcome::EvidenceFound => {
            let grounded = verdict.grounded_text.clone().ok_or_else(|| {
                Error::Validation("evidence verdict without grounded text".into())
            })?;
            let vectors = gateway
                .embed_batch(&[grounded.clone(), original.text.clone()])
                .await?;
            let similarity = cosine_similarity(&vectors[0], &vectors[1])?;
            let action = if similarity > config.tau_sim {
                MergeAction::KeepNewDropOriginal
            } else {
                MergeAction::ReplaceOriginalWithNew
            };
            let survivor = MemoryEntry {
                entry_id: original.entry_id.clone(),
                text: grounded,
                status: MemoryStatus::Verified,
                source_turn_indices: verdict.evidence_turn_indices.clone(),
                session_id: original.session_id.clone(),
                created_timestamp: extraction::derive_timestamp(
                    session,
                    &verdict.evidence_turn_indices,
                    run_timestamp,
                ),
            };
            Ok((action, Some(survivor)))
        }
    }
}

/// The question → verify → update loop over all candidates, in order,
/// followed by a global pairwise dedup (earlier survivor wins). Produces
/// M_final plus a report of per-entry actions and warnings.
pub async fn run_verification(
    candidates: Vec<MemoryEntry>,
    session: &DialogueSession,
    config: &VerificationConfig,
    gateway: &Gateway,
    run_timestamp: &str,
) -> Result<(Vec<MemoryEntry>, VerificationReport)> {
    config.validate()?;
    let mut report = VerificationReport::default();
    let mut survivors: Vec<MemoryEntry> = Vec::new();

    for candidate in candidates {
        let questioned = match generate_question(&candidate, gateway).await {
            Ok(q) => q,
            Err(e @ Error::VerificationFormat(_)) => {
                report.warnings.push(e.to_string());
                report.actions.push(EntryAction {
                    entry_id: candidate.entry_id.clone(),
                    action: EntryDisposition::RetainedUnverified,
                    original_text: candidate.text.clone(),
                    grounded_text: None,
                    question: None,
                    evidence_turn_indices: Vec::new(),
                });
                survivors.push(candidate);
                continue;
            }
            Err(other) => return Err(other),
        };
        let verdict = match seek_evidence(&questioned, session, gateway).await {
            Ok(v) => v,
            Err(e @ Error::VerificationFormat(_)) => {
                report.warnings.push(e.to_string());
                report.actions.push(EntryAction {
                    entry_id: candidate.entry_id.clone(),
                    action: EntryDisposition::RetainedUnverified,
                    original_text: candidate.text.clone(),
                    grounded_text: None,
                    question: Some(questioned.question_text.clone()),
                    evidence_turn_indices: Vec::new(),
                });
                survivors.push(candidate);
                continue;
            }
            Err(other) => return Err(other),
        };
        let (action, survivor) = dedup_merge(
            &candidate,
            &verdict,
            config,
            session,
            gateway,
            run_timestamp,
        )
        .await?;
        let disposition = match action {
            MergeAction::KeepNewDropOriginal => EntryDisposition::KeptNew,
            MergeAction::ReplaceOriginalWithNew => EntryDisposition::Replaced,
            MergeAction::DiscardBoth => EntryDisposition::DiscardedHallucination,
        };
        report.actions.push(EntryAction {
            entry_id: candidate.entry_id.clone(),
            action: disposition,
            original_text: candidate.text.clone(),
            grounded_text: verdict.grounded_text.clone(),
            question: Some(questioned.question_text),
            evidence_turn_indices: verdict.evidence_turn_indices.clone(),
        });
        if let Some(survivor) = survivor {
            survivors.push(survivor);
        }
    }

    // Global pairwise dedup across survivors; Eq-style comparison only
    // relates a rewrite to its own origin, so cross-entry redundancy is
    // handled here, earliest entry winning.
    let mut accepted: Vec<MemoryEntry> = Vec::new();
    for entry in survivors {
        let mut duplicate_of: Option<String> = None;
        for kept in &accepted {
            let vectors = gateway
                .embed_batch(&[entry.text.clone(), kept.text.clone()])
                .await?;
            if cosine_similarity(&vectors[0], &vectors[1])? > config.tau_sim {
                duplicate_of = Some(kept.entry_id.clone());
                break;
            }
        }
        if let Some(kept_id) = duplicate_of {
            report.actions.push(EntryAction {
                entry_id: entry.entry_id.clone(),
                action: EntryDisposition::DroppedDuplicate,
                original_text: entry.text.clone(),
                grounded_text: None,
                question: None,
                evidence_turn_indices: entry.source_turn_indices.clone(),
            });
            report.warnings.push(format!(
                "entry {} dropped as duplicate of {}",
                entry.entry_id, kept_id
            ));
        } else {
            accepted.push(entry);
        }
    }
    Ok((accepted, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{DialogueTurn, Speaker};
    use crate::gateway::FixtureBackend;
    use std::sync::Arc;

    fn session(texts: &[&str]) -> DialogueSession {
        DialogueSession {
            session_id: "s1".into(),
            turns: texts
                .iter()
                .enumerate()
                .map(|(i, t)| DialogueTurn {
                    turn_index: i,
                    speaker: Speaker::User,
                    text: t.to_string(),
                    timestamp: Some(format!("2025-03-01T10:{i:02}:00Z")),
                })
                .collect(),
        }
    }

    fn entry(id: &str, text: &str) -> MemoryEntry {
        MemoryEntry {
            entry_id: id.into(),
            text: text.into(),
            status: MemoryStatus::Initial,
            source_turn_indices: vec![],
            session_id: "s1".into(),
            created_timestamp: "1970-01-01T00:00:00Z".into(),
        }
    }

    const RUN_TS: &str = "1970-01-01T00:00:00Z";

    #[tokio::test]
    async fn question_matches_recorded_example_and_normalizes() {
        let e = entry("e0", "The user likes apples");
        let mut backend = FixtureBackend::new(256);
        backend.insert_chat_for(prompts::QUESTION, &e.text, "Why does the user like apples?");
        let gw = Gateway::new(Arc::new(backend));
        let q = generate_question(&e, &gw).await.unwrap();
        assert_eq!(q.question_text, "Why does the user like apples?");

        // Missing '?' gets appended.
        let mut backend = FixtureBackend::new(256);
        backend.insert_chat_for(
            prompts::QUESTION,
            &e.text,
            "Why does the user like apples  \n",
        );
        let gw = Gateway::new(Arc::new(backend));
        let q = generate_question(&e, &gw).await.unwrap();
        assert_eq!(q.question_text, "Why does the user like apples?");

        // Empty response is a format error.
        let mut backend = FixtureBackend::new(256);
        backend.insert_chat_for(prompts::QUESTION, &e.text, "   ");
        let gw = Gateway::new(Arc::new(backend));
        assert!(matches!(
            generate_question(&e, &gw).await.unwrap_err(),
            Error::VerificationFormat(_)
        ));
    }

    fn judge_payload(question: &str, s: &DialogueSession) -> String {
        format!("Question: {question}\n\nDialogue:\n{}", s.transcript())
    }

    #[tokio::test]
    async fn judge_no_maps_to_hallucination() {
        let s = session(&["I like apples because they are sweet"]);
        let q = ProbeQuestion {
            entry_id: "e0".into(),
            question_text: "Does the user own a yacht?".into(),
        };
        let mut backend = FixtureBackend::new(256);
        backend.insert_chat_for(
            prompts::JUDGE,
            &judge_payload(&q.question_text, &s),
            r#"{"found": "no"}"#,
        );
        let gw = Gateway::new(Arc::new(backend));
        let verdict = seek_evidence(&q, &s, &gw).await.unwrap();
        assert_eq!(verdict.outcome, VerdictOutcome::Hallucination);
        assert!(verdict.grounded_text.is_none());
    }

    #[tokio::test]
    async fn judge_yes_maps_to_grounded_verdict() {
        let s = session(&["hello", "there", "I like apples because they are sweet"]);
        let q = ProbeQuestion {
            entry_id: "e0".into(),
            question_text: "Why does the user like apples?".into(),
        };
        let mut backend = FixtureBackend::new(256);
        backend.insert_chat_for(
            prompts::JUDGE,
            &judge_payload(&q.question_text, &s),
            r#"{"found": "yes", "answer": "User likes apples because they are sweet", "turns": [2]}"#,
        );
        let gw = Gateway::new(Arc::new(backend));
        let verdict = seek_evidence(&q, &s, &gw).await.unwrap();
        assert_eq!(verdict.outcome, VerdictOutcome::EvidenceFound);
        assert_eq!(
            verdict.grounded_text.as_deref(),
            Some("User likes apples because they are sweet")
        );
        assert_eq!(verdict.evidence_turn_indices, vec![2]);
    }

    #[tokio::test]
    async fn judge_garbage_is_a_format_error() {
        let s = session(&["something"]);
        let q = ProbeQuestion {
            entry_id: "e0".into(),
            question_text: "Anything?".into(),
        };
        for bad in [
            "maybe",
            r#"{"found": "perhaps"}"#,
            r#"{"found": "yes"}"#,
            r#"{"found": "yes", "answer": "x"}"#,
            r#"{"found": "yes", "answer": "x", "turns": [9]}"#,
        ] {
            let mut backend = FixtureBackend::new(256);
            backend.insert_chat_for(prompts::JUDGE, &judge_payload(&q.question_text, &s), bad);
            let gw = Gateway::new(Arc::new(backend));
            let err = seek_evidence(&q, &s, &gw).await.unwrap_err();
            assert!(
                matches!(err, Error::VerificationFormat(_)),
                "{bad} -> {err:?}"
            );
        }
    }

    fn verdict_found(entry_id: &str, text: &str, turns: Vec<usize>) -> VerificationVerdict {
        VerificationVerdict {
            entry_id: entry_id.into(),
            outcome: VerdictOutcome::EvidenceFound,
            grounded_text: Some(text.into()),
            evidence_turn_indices: turns,
        }
    }

    #[tokio::test]
    async fn merge_actions_cover_every_combination() {
        let s = session(&["I play chess on sundays at the park"]);
        let gw = Gateway::new(Arc::new(FixtureBackend::new(512)));
        let config = VerificationConfig::default();

        // Identical rewrite: similarity 1.0 > 0.8 -> keep the rewrite.
        let original = entry("e0", "User plays chess on sundays");
        let verdict = verdict_found("e0", "User plays chess on sundays", vec![0]);
        let (action, survivor) = dedup_merge(&original, &verdict, &config, &s, &gw, RUN_TS)
            .await
            .unwrap();
        assert_eq!(action, MergeAction::KeepNewDropOriginal);
        let survivor = survivor.unwrap();
        assert_eq!(survivor.status, MemoryStatus::Verified);
        assert_eq!(survivor.source_turn_indices, vec![0]);
        assert_eq!(survivor.created_timestamp, "2025-03-01T10:00:00Z");

        // Consistent paraphrase: one extra token on six shared ones puts
        // the similarity at sqrt(6/7) ~ 0.93, above the threshold but
        // below identity -> still keep the grounded version.
        let original = entry("e0", "User plays speed chess on sundays");
        let verdict = verdict_found("e0", "User plays speed chess on sundays regularly", vec![0]);
        let (action, survivor) = dedup_merge(&original, &verdict, &config, &s, &gw, RUN_TS)
            .await
            .unwrap();
        assert_eq!(action, MergeAction::KeepNewDropOriginal);
        assert_eq!(
            survivor.unwrap().text,
            "User plays speed chess on sundays regularly"
        );

        // Disjoint rewrite: similarity ~0 <= 0.8 -> correction replaces.
        let original = entry("e0", "User plays chess on sundays");
        let verdict = verdict_found("e0", "Consectetur adipiscing elit vero", vec![0]);
        let (action, survivor) = dedup_merge(&original, &verdict, &config, &s, &gw, RUN_TS)
            .await
            .unwrap();
        assert_eq!(action, MergeAction::ReplaceOriginalWithNew);
        assert_eq!(survivor.unwrap().text, "Consectetur adipiscing elit vero");

        // Hallucination -> discard both.
        let verdict = VerificationVerdict {
            entry_id: "e0".into(),
            outcome: VerdictOutcome::Hallucination,
            grounded_text: None,
            evidence_turn_indices: vec![],
        };
        let (action, survivor) = dedup_merge(&original, &verdict, &config, &s, &gw, RUN_TS)
            .await
            .unwrap();
        assert_eq!(action, MergeAction::DiscardBoth);
        assert!(survivor.is_none());
    }

    #[tokio::test]
    async fn mismatched_verdict_rejected() {
        let s = session(&["a"]);
        let gw = Gateway::new(Arc::new(FixtureBackend::new(64)));
        let original = entry("e0", "text");
        let verdict = verdict_found("other", "text", vec![0]);
        assert!(matches!(
            dedup_merge(
                &original,
                &verdict,
                &VerificationConfig::default(),
                &s,
                &gw,
                RUN_TS
            )
            .await
            .unwrap_err(),
            Error::Validation(_)
        ));
    }

    /// (entry text, question, judged evidence) triple.
    type ScriptedEntry<'a> = (&'a str, &'a str, Option<(&'a str, Vec<usize>)>);

    fn scripted_backend(s: &DialogueSession, entries: &[ScriptedEntry<'_>]) -> FixtureBackend {
        let mut backend = FixtureBackend::new(512);
        for (text, question, evidence) in entries {
            backend.insert_chat_for(prompts::QUESTION, text, *question);
            let response = match evidence {
                None => r#"{"found": "no"}"#.to_string(),
                Some((answer, turns)) => serde_json::json!({
                    "found": "yes",
                    "answer": answer,
                    "turns": turns,
                })
                .to_string(),
            };
            backend.insert_chat_for(prompts::JUDGE, &judge_payload(question, s), &response);
        }
        backend
    }

    #[tokio::test]
    async fn empty_candidates_produce_empty_final() {
        let s = session(&["a"]);
        let gw = Gateway::new(Arc::new(FixtureBackend::new(64)));
        let (final_entries, report) =
            run_verification(vec![], &s, &VerificationConfig::default(), &gw, RUN_TS)
                .await
                .unwrap();
        assert!(final_entries.is_empty());
        assert!(report.actions.is_empty());
    }

    #[tokio::test]
    async fn identical_grounded_texts_collapse_to_one() {
        let s = session(&["I swim at the lake early on tuesday mornings"]);
        let grounded = "User swims at the lake on tuesday mornings";
        let backend = scripted_backend(
            &s,
            &[
                (
                    "User swims at a lake",
                    "Where does the user swim?",
                    Some((grounded, vec![0])),
                ),
                (
                    "User swims on tuesdays",
                    "When does the user swim?",
                    Some((grounded, vec![0])),
                ),
            ],
        );
        let gw = Gateway::new(Arc::new(backend));
        let candidates = vec![
            entry("e0", "User swims at a lake"),
            entry("e1", "User swims on tuesdays"),
        ];
        let (final_entries, report) =
            run_verification(candidates, &s, &VerificationConfig::default(), &gw, RUN_TS)
                .await
                .unwrap();
        assert_eq!(final_entries.len(), 1);
        assert_eq!(final_entries[0].entry_id, "e0");
        assert!(report
            .actions
            .iter()
            .any(|a| a.action == EntryDisposition::DroppedDuplicate && a.entry_id == "e1"));
    }

    #[tokio::test]
    async fn hallucination_never_survives_and_format_failures_are_retained() {
        let s = session(&["I foster retired greyhounds from the shelter"]);
        let mut backend = scripted_backend(
            &s,
            &[
                (
                    "User fosters retired greyhounds",
                    "Where do the greyhounds come from?",
                    Some(("User fosters retired greyhounds from the shelter", vec![0])),
                ),
                (
                    "User owns a submarine",
                    "Does the user own a submarine?",
                    None,
                ),
            ],
        );
        // Third candidate: judge replies garbage.
        backend.insert_chat_for(
            prompts::QUESTION,
            "User might like jazz",
            "Does the user like jazz?",
        );
        backend.insert_chat_for(
            prompts::JUDGE,
            &judge_payload("Does the user like jazz?", &s),
            "cannot tell",
        );
        let gw = Gateway::new(Arc::new(backend));
        let candidates = vec![
            entry("e0", "User fosters retired greyhounds"),
            entry("e1", "User owns a submarine"),
            entry("e2", "User might like jazz"),
        ];
        let (final_entries, report) =
            run_verification(candidates, &s, &VerificationConfig::default(), &gw, RUN_TS)
                .await
                .unwrap();

        let ids: Vec<&str> = final_entries.iter().map(|e| e.entry_id.as_str()).collect();
        assert_eq!(ids, vec!["e0", "e2"]);
        // Verified entries are grounded; the retained one kept its status.
        assert_eq!(final_entries[0].status, MemoryStatus::Verified);
        assert!(!final_entries[0].source_turn_indices.is_empty());
        assert_eq!(final_entries[1].status, MemoryStatus::Initial);
        assert_eq!(report.warnings.len(), 1);
        assert!(report
            .actions
            .iter()
            .any(|a| a.action == EntryDisposition::DiscardedHallucination && a.entry_id == "e1"));
    }

    #[tokio::test]
    async fn verification_is_deterministic() {
        let s = session(&["I collect vintage radios from the forties"]);
        let make = || {
            scripted_backend(
                &s,
                &[(
                    "User collects vintage radios",
                    "What does the user collect?",
                    Some(("User collects vintage radios from the forties", vec![0])),
                )],
            )
        };
        let candidates = vec![entry("e0", "User collects vintage radios")];
        let gw1 = Gateway::new(Arc::new(make()));
        let gw2 = Gateway::new(Arc::new(make()));
        let (a, ra) = run_verification(
            candidates.clone(),
            &s,
            &VerificationConfig::default(),
            &gw1,
            RUN_TS,
        )
        .await
        .unwrap();
        let (b, rb) =
            run_verification(candidates, &s, &VerificationConfig::default(), &gw2, RUN_TS)
                .await
                .unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&ra).unwrap(),
            serde_json::to_string(&rb).unwrap()
        );
    }
}
