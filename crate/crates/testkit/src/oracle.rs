//! Scripted backend that answers from the planted-facts manifest.
//!
//! Fixture authoring runs the real pipeline against this backend (wrapped
//! in a [`crate::recorder::RecordingBackend`]) and ships the recorded
//! traffic. The oracle knows the corpus, its compressed variant, and the
//! degradation rules: which facts the initial pass sees, and which facts a
//! targeted supplement pass can still recover from mangled turns.

use std::collections::HashMap;

use async_trait::async_trait;
use memloop_core::compressor::{compress_session, CompressionConfig};
use memloop_core::dialogue::DialogueSession;
use memloop_core::error::{Error, Result};
use memloop_core::gateway::{fixture_embed, Backend, ChatRequest, EmbeddingVector};
use memloop_core::prompts;

use crate::corpus::{
    Corpus, COMPRESSION_RATIO, FIXTURE_DIMENSION, HALLUCINATION_POSITION, OMITTED_INITIAL,
};

/// Initial extraction reads a compressed fact only when at least this many
/// of its seven topic tokens survive in the user turn.
const INITIAL_VISIBILITY: usize = 5;

/// The targeted supplement pass recovers an omitted fact when at least one
/// topic token survives in its user turn.
const SUPPLEMENT_VISIBILITY: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Original,
    Compressed,
}

struct FactPlan {
    text: String,
    user_turn: usize,
    ack_turn: usize,
    /// Topic tokens surviving in the user turn, per variant rule.
    visible_tokens: usize,
}

struct SessionPlan {
    turn_lines: Vec<String>,
    facts: Vec<FactPlan>,
    hallucination: String,
    /// Fact indices the initial extraction response omits.
    omitted: Vec<usize>,
}

impl SessionPlan {
    fn initial_response(&self) -> String {
        let mut items: Vec<String> = self
            .facts
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.omitted.contains(i))
            .map(|(_, f)| f.text.clone())
            .collect();
        let position = HALLUCINATION_POSITION.min(items.len());
        items.insert(position, self.hallucination.clone());
        serde_json::to_string(&items).expect("items serialize")
    }

    fn supplement_response(&self, uncovered: &[usize]) -> Result<String> {
        let recovered: Vec<String> = self
            .facts
            .iter()
            .enumerate()
            .filter(|(i, f)| {
                self.omitted.contains(i)
                    && uncovered.contains(&f.user_turn)
                    && f.visible_tokens >= SUPPLEMENT_VISIBILITY
            })
            .map(|(_, f)| f.text.clone())
            .collect();
        if recovered.is_empty() {
            return Err(Error::BackendProtocol(
                "oracle: supplement pass found nothing recoverable (corpus constraint violated)"
                    .into(),
            ));
        }
        Ok(serde_json::to_string(&recovered).expect("items serialize"))
    }
}

pub struct OracleBackend {
    /// extract payload (full transcript) → session plan.
    extract_plans: HashMap<String, usize>,
    plans: Vec<SessionPlan>,
    /// fact/hallucination text → (plan idx, Some(fact idx) | None).
    known_texts: Vec<(String, usize, Option<usize>)>,
    /// QA question → embellished answer.
    qa_answers: HashMap<String, String>,
}

impl OracleBackend {
    pub fn new(corpus: &Corpus, compression_seed: u64) -> Self {
        let compression = CompressionConfig {
            ratio: COMPRESSION_RATIO,
            seed: compression_seed,
        };
        let mut extract_plans = HashMap::new();
        let mut plans = Vec::new();
        let mut known_texts = Vec::new();
        let mut qa_answers = HashMap::new();

        for (spec, session) in corpus.specs.iter().zip(&corpus.sessions) {
            let compressed =
                compress_session(session, &compression).expect("valid compression config");
            for (variant, session) in [
                (Variant::Original, session),
                (Variant::Compressed, &compressed),
            ] {
                let plan = build_plan(spec, session, variant);
                extract_plans.insert(session.transcript(), plans.len());
                plans.push(plan);
            }
            for (i, fact) in spec.facts.iter().enumerate() {
                known_texts.push((fact.text(), plans.len() - 2, Some(i)));
            }
            known_texts.push((spec.hallucination.to_string(), plans.len() - 2, None));
        }
        for gold in corpus.gold() {
            for item in gold.qa_items {
                qa_answers.insert(
                    item.question.clone(),
                    format!("According to stored memory, {}.", item.gold_answer),
                );
            }
        }
        // Longest first so containment lookups can never hit a prefix.
        known_texts.sort_by_key(|(text, _, _)| std::cmp::Reverse(text.len()));
        Self {
            extract_plans,
            plans,
            known_texts,
            qa_answers,
        }
    }

    fn extract(&self, payload: &str) -> Result<String> {
        let plan_idx = self.extract_plans.get(payload).ok_or_else(|| {
            Error::BackendProtocol("oracle: extract payload matches no known session".into())
        })?;
        Ok(self.plans[*plan_idx].initial_response())
    }

    fn supplement(&self, payload: &str) -> Result<String> {
        let mut indices = Vec::new();
        let mut first_line = None;
        for line in payload.lines().filter(|l| !l.trim().is_empty()) {
            let idx: usize = line
                .strip_prefix('[')
                .and_then(|rest| rest.split(']').next())
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| {
                    Error::BackendProtocol(format!("oracle: unparseable transcript line {line:?}"))
                })?;
            indices.push(idx);
            first_line.get_or_insert(line.to_string());
        }
        let first_line = first_line
            .ok_or_else(|| Error::BackendProtocol("oracle: empty supplement payload".into()))?;
        let plan = self
            .plans
            .iter()
            .find(|p| p.turn_lines.contains(&first_line))
            .ok_or_else(|| {
                Error::BackendProtocol(format!(
                    "oracle: supplement line matches no session: {first_line:?}"
                ))
            })?;
        plan.supplement_response(&indices)
    }

    fn question(&self, payload: &str) -> String {
        format!("What evidence in the dialogue supports the claim that {payload}?")
    }

    fn judge(&self, payload: &str) -> Result<String> {
        let (text, plan_idx, fact_idx) = self
            .known_texts
            .iter()
            .find(|(text, _, _)| payload.contains(text.as_str()))
            .ok_or_else(|| {
                Error::BackendProtocol(format!(
                    "oracle: judge payload mentions no known entry: {payload:.120}"
                ))
            })?;
        let _ = text;
        match fact_idx {
            None => Ok(r#"{"found": "no"}"#.to_string()),
            Some(i) => {
                let fact = &self.plans[*plan_idx].facts[*i];
                Ok(serde_json::json!({
                    "found": "yes",
                    "answer": fact.text,
                    "turns": [fact.user_turn, fact.ack_turn],
                })
                .to_string())
            }
        }
    }

    fn answer(&self, payload: &str) -> Result<String> {
        let question = payload
            .rsplit("Question: ")
            .next()
            .unwrap_or_default()
            .trim();
        self.qa_answers.get(question).cloned().ok_or_else(|| {
            Error::BackendProtocol(format!("oracle: unknown qa question {question:?}"))
        })
    }
}

fn build_plan(
    spec: &crate::corpus::SessionSpec,
    session: &DialogueSession,
    variant: Variant,
) -> SessionPlan {
    let turn_lines: Vec<String> = session
        .transcript()
        .lines()
        .map(|l| l.to_string())
        .collect();
    let facts: Vec<FactPlan> = spec
        .facts
        .iter()
        .enumerate()
        .map(|(i, fact)| {
            let kept: std::collections::HashSet<String> = session.turns[2 * i]
                .text
                .split_whitespace()
                .map(|t| t.to_lowercase())
                .collect();
            let visible_tokens = fact
                .topic
                .split_whitespace()
                .filter(|t| kept.contains(&t.to_lowercase()))
                .count();
            FactPlan {
                text: fact.text(),
                user_turn: 2 * i,
                ack_turn: 2 * i + 1,
                visible_tokens,
            }
        })
        .collect();
    let omitted = match variant {
        Variant::Original => OMITTED_INITIAL.to_vec(),
        Variant::Compressed => {
            // The lazy first pass still misses the always-omitted facts
            // and additionally whatever compression mangled too far.
            let mut omitted: Vec<usize> = (0..facts.len())
                .filter(|i| {
                    OMITTED_INITIAL.contains(i) || facts[*i].visible_tokens < INITIAL_VISIBILITY
                })
                .collect();
            omitted.dedup();
            omitted
        }
    };
    SessionPlan {
        turn_lines,
        facts,
        hallucination: spec.hallucination.to_string(),
        omitted,
    }
}

#[async_trait]
impl Backend for OracleBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<String> {
        let payload = request.user_payload.as_str();
        match request.role_prompt.as_str() {
            p if p == prompts::EXTRACT => self.extract(payload),
            p if p == prompts::SUPPLEMENT => self.supplement(payload),
            p if p == prompts::QUESTION => Ok(self.question(payload)),
            p if p == prompts::JUDGE => self.judge(payload),
            p if p == prompts::ANSWER => self.answer(payload),
            _ => Err(Error::BackendProtocol(
                "oracle: no rule for this role prompt (entailment/qa-judge are not scripted)"
                    .into(),
            )),
        }
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        texts
            .iter()
            .map(|t| fixture_embed(t, FIXTURE_DIMENSION))
            .collect()
    }
}
