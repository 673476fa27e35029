//! The three metrics against gold annotations: memory integrity (recall of
//! gold facts), memory accuracy (precision of extracted entries), and QA
//! accuracy (can the store answer the gold questions).
//!
//! Matching is pluggable: a deterministic embedding-threshold matcher for
//! offline runs and CI, and an LLM-judge matcher for live evaluation. Every
//! reported ratio is recomputable from its emitted trace.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::completion::cosine_similarity;
use crate::error::{Error, Result};
use crate::extraction::MemoryEntry;
use crate::gateway::{ChatRequest, Gateway};
use crate::prompts;
use crate::store::{answer_question, MemoryStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub question: String,
    pub gold_answer: String,
}

/// One JSONL line of the gold file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub session_id: String,
    pub gold_facts: Vec<String>,
    #[serde(default)]
    pub qa_items: Vec<QaItem>,
}

pub fn parse_gold_file(path: &Path) -> Result<Vec<GoldAnnotation>> {
    let origin = path.display().to_string();
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading gold file {origin}"), e))?;
    parse_gold_jsonl(&raw, &origin)
}

pub fn parse_gold_jsonl(input: &str, origin: &str) -> Result<Vec<GoldAnnotation>> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let gold: GoldAnnotation = serde_json::from_str(line).map_err(|e| Error::Parse {
            origin: origin.to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        if gold.qa_items.iter().any(|q| q.question.trim().is_empty()) {
            return Err(Error::Validation(format!(
                "{origin}:{}: empty question in qa_items",
                idx + 1
            )));
        }
        out.push(gold);
    }
    Ok(out)
}

pub fn default_tau_eval() -> f64 {
    0.8
}

/// How gold facts and extracted entries are matched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FactMatcher {
    /// cosine(embed(gold), embed(entry)) > tau_eval. Deterministic;
    /// tau_eval is its own key, independent of tau_sim.
    Embedding { tau_eval: f64 },
    /// One entailment chat call per (gold, entry) pair tried.
    LlmJudge,
}

impl Default for FactMatcher {
    fn default() -> Self {
        FactMatcher::Embedding {
            tau_eval: default_tau_eval(),
        }
    }
}

/// How QA answers are graded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerJudge {
    /// Correct when the normalized gold answer is contained in the
    /// normalized answer. Deterministic.
    #[default]
    Containment,
    /// One grading chat call per item.
    LlmJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    #[serde(default)]
    pub matcher: FactMatcher,
    #[serde(default)]
    pub answer_judge: AnswerJudge,
    #[serde(default = "crate::store::default_retrieval_k")]
    pub retrieval_k: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            matcher: FactMatcher::default(),
            answer_judge: AnswerJudge::default(),
            retrieval_k: crate::store::default_retrieval_k(),
        }
    }
}

async fn facts_match(
    matcher: &FactMatcher,
    gold: &str,
    entry_text: &str,
    gateway: &Gateway,
) -> Result<bool> {
    match matcher {
        FactMatcher::Embedding { tau_eval } => {
            let vectors = gateway
                .embed_batch(&[gold.to_string(), entry_text.to_string()])
                .await?;
            Ok(cosine_similarity(&vectors[0], &vectors[1])? > *tau_eval)
        }
        FactMatcher::LlmJudge => {
            let payload = format!("Reference fact: {gold}\nCandidate fact: {entry_text}");
            let response = gateway
                .complete(&ChatRequest::new(prompts::ENTAILMENT, payload))
                .await?;
            parse_yes_no_envelope(&response, "match")
        }
    }
}

fn parse_yes_no_envelope(response: &str, field: &str) -> Result<bool> {
    let value: serde_json::Value = serde_json::from_str(
        response
            .trim()
            .trim_start_matches("```json")
            .trim_matches('`')
            .trim(),
    )
    .map_err(|e| {
        Error::VerificationFormat(format!("judge envelope is not JSON ({e}): {response:?}"))
    })?;
    match value.get(field).and_then(|v| v.as_str()) {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(Error::VerificationFormat(format!(
            "judge envelope missing yes/no {field:?}: {response:?}"
        ))),
    }
}

fn normalize_for_containment(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
        .chars()
        .filter(|c| !matches!(c, '.' | ',' | '!' | ';' | ':'))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrityTraceRow {
    pub session_id: String,
    pub gold_fact: String,
    pub matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_entry_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTraceRow {
    pub session_id: String,
    pub entry_id: String,
    pub entry_text: String,
    pub matched: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub supported_by: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaTraceRow {
    pub session_id: String,
    pub question: String,
    pub gold_answer: String,
    pub answer: String,
    pub correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalTraces {
    pub integrity: Vec<IntegrityTraceRow>,
    pub accuracy: Vec<AccuracyTraceRow>,
    pub qa: Vec<QaTraceRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub memory_integrity: f64,
    pub memory_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qa_accuracy: Option<f64>,
    pub traces: EvalTraces,
    pub warnings: Vec<String>,
}

impl EvalReport {
    /// Human-readable summary table.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("+-------------------+--------+\n");
        out.push_str(&format!(
            "| memory integrity  | {:>6.4} |\n",
            self.memory_integrity
        ));
        out.push_str(&format!(
            "| memory accuracy   | {:>6.4} |\n",
            self.memory_accuracy
        ));
        match self.qa_accuracy {
            Some(qa) => out.push_str(&format!("| qa accuracy       | {qa:>6.4} |\n")),
            None => out.push_str("| qa accuracy       |    n/a |\n"),
        }
        out.push_str("+-------------------+--------+\n");
        out
    }
}

/// Recall: fraction of gold facts matched by at least one extracted entry.
/// One entry may cover several gold facts.
pub async fn memory_integrity(
    gold: &[String],
    extracted: &[MemoryEntry],
    matcher: &FactMatcher,
    session_id: &str,
    gateway: &Gateway,
) -> Result<(f64, Vec<IntegrityTraceRow>)> {
    if gold.is_empty() {
        return Err(Error::Validation(format!(
            "session {session_id:?}: gold_facts is empty; integrity is undefined"
        )));
    }
    let mut rows = Vec::with_capacity(gold.len());
    let mut matched_count = 0usize;
    for fact in gold {
        let mut matched_entry_id = None;
        for entry in extracted {
            if facts_match(matcher, fact, &entry.text, gateway).await? {
                matched_entry_id = Some(entry.entry_id.clone());
                break;
            }
        }
        if matched_entry_id.is_some() {
            matched_count += 1;
        }
        rows.push(IntegrityTraceRow {
            session_id: session_id.to_string(),
            gold_fact: fact.clone(),
            matched: matched_entry_id.is_some(),
            matched_entry_id,
        });
    }
    Ok((matched_count as f64 / gold.len() as f64, rows))
}

/// Precision: fraction of extracted entries supported by some gold fact.
/// An empty extraction is vacuous precision — defined as 1.0 with a
/// warning rather than a silent NaN.
pub async fn memory_accuracy(
    gold: &[String],
    extracted: &[MemoryEntry],
    matcher: &FactMatcher,
    session_id: &str,
    gateway: &Gateway,
) -> Result<(f64, Vec<AccuracyTraceRow>, Vec<String>)> {
    if extracted.is_empty() {
        return Ok((
            1.0,
            Vec::new(),
            vec![format!(
                "session {session_id:?}: no extracted entries; accuracy 1.0 is vacuous"
            )],
        ));
    }
    let mut rows = Vec::with_capacity(extracted.len());
    let mut matched_count = 0usize;
    for entry in extracted {
        let mut supported_by = None;
        for fact in gold {
            if facts_match(matcher, fact, &entry.text, gateway).await? {
                supported_by = Some(fact.clone());
                break;
            }
        }
        if supported_by.is_some() {
            matched_count += 1;
        }
        rows.push(AccuracyTraceRow {
            session_id: session_id.to_string(),
            entry_id: entry.entry_id.clone(),
            entry_text: entry.text.clone(),
            matched: supported_by.is_some(),
            supported_by,
        });
    }
    Ok((
        matched_count as f64 / extracted.len() as f64,
        rows,
        Vec::new(),
    ))
}

/// Fraction of gold questions the store answers correctly. A failed
/// answer call counts as incorrect with a recorded warning; the item run
/// continues.
pub async fn qa_accuracy(
    items: &[QaItem],
    store: &MemoryStore,
    settings: &EvalSettings,
    session_id: &str,
    gateway: &Gateway,
) -> Result<(f64, Vec<QaTraceRow>, Vec<String>)> {
    if items.is_empty() {
        return Err(Error::Validation(format!(
            "session {session_id:?}: qa_items is empty; qa accuracy is undefined"
        )));
    }
    let mut rows = Vec::with_capacity(items.len());
    let mut warnings = Vec::new();
    let mut correct_count = 0usize;
    for item in items {
        let (answer, correct, warning) =
            match answer_question(store, &item.question, settings.retrieval_k, gateway).await {
                Ok(answer) => {
                    let correct = match settings.answer_judge {
                        AnswerJudge::Containment => normalize_for_containment(&answer)
                            .contains(&normalize_for_containment(&item.gold_answer)),
                        AnswerJudge::LlmJudge => {
                            let payload = format!(
                                "Question: {}\nGold answer: {}\nCandidate answer: {}",
                                item.question, item.gold_answer, answer
                            );
                            let response = gateway
                                .complete(&ChatRequest::new(prompts::QA_JUDGE, payload))
                                .await?;
                            parse_yes_no_envelope(&response, "correct")?
                        }
                    };
                    (answer, correct, None)
                }
                Err(e) => {
                    let warning = format!(
                        "session {session_id:?}: answering {:?} failed: {e}",
                        item.question
                    );
                    warnings.push(warning.clone());
                    (String::new(), false, Some(warning))
                }
            };
        if correct {
            correct_count += 1;
        }
        rows.push(QaTraceRow {
            session_id: session_id.to_string(),
            question: item.question.clone(),
            gold_answer: item.gold_answer.clone(),
            answer,
            correct,
            warning,
        });
    }
    Ok((correct_count as f64 / items.len() as f64, rows, warnings))
}

/// Evaluate stores against gold annotations, micro-averaged: ratios are
/// computed over all (session, item) pairs pooled together, and equal the
/// ratios recomputable from the traces.
pub async fn evaluate_corpus(
    pairs: &[(&GoldAnnotation, &MemoryStore)],
    settings: &EvalSettings,
    gateway: &Gateway,
) -> Result<EvalReport> {
    let mut traces = EvalTraces::default();
    let mut warnings = Vec::new();
    let mut entries_total = 0usize;

    for (gold, store) in pairs {
        let (_, integrity_rows) = memory_integrity(
            &gold.gold_facts,
            &store.entries,
            &settings.matcher,
            &gold.session_id,
            gateway,
        )
        .await?;
        traces.integrity.extend(integrity_rows);

        let (_, accuracy_rows, acc_warnings) = memory_accuracy(
            &gold.gold_facts,
            &store.entries,
            &settings.matcher,
            &gold.session_id,
            gateway,
        )
        .await?;
        entries_total += store.entries.len();
        traces.accuracy.extend(accuracy_rows);
        warnings.extend(acc_warnings);

        if !gold.qa_items.is_empty() {
            let (_, qa_rows, qa_warnings) =
                qa_accuracy(&gold.qa_items, store, settings, &gold.session_id, gateway).await?;
            traces.qa.extend(qa_rows);
            warnings.extend(qa_warnings);
        }
    }

    let integrity_total = traces.integrity.len();
    let memory_integrity = if integrity_total == 0 {
        return Err(Error::Validation("no gold facts across the corpus".into()));
    } else {
        traces.integrity.iter().filter(|r| r.matched).count() as f64 / integrity_total as f64
    };
    let memory_accuracy = if entries_total == 0 {
        warnings.push("no extracted entries across the corpus; accuracy 1.0 is vacuous".into());
        1.0
    } else {
        traces.accuracy.iter().filter(|r| r.matched).count() as f64 / entries_total as f64
    };
    let qa_accuracy = if traces.qa.is_empty() {
        None
    } else {
        Some(traces.qa.iter().filter(|r| r.correct).count() as f64 / traces.qa.len() as f64)
    };

    Ok(EvalReport {
        memory_integrity,
        memory_accuracy,
        qa_accuracy,
        traces,
        warnings,
    })
}
