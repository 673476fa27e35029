//! End-to-end driver: extract → align/complete → verify → store, with
//! optional evaluation, stage gating for ablations, and call-budget
//! accounting. Sessions are independent and run on a worker pool; stage
//! order within a session never changes — gating flags remove stages but
//! never reorder them.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use futures::StreamExt;
use serde::{Deserialize, Serialize};

use crate::completion::{self, AlignmentReport, CompletionConfig};
use crate::dialogue::DialogueSession;
use crate::error::{Error, Result};
use crate::eval::{self, AnswerJudge, EvalReport, EvalSettings, FactMatcher, GoldAnnotation};
use crate::extraction::{self, ExtractionContext, MemoryEntry};
use crate::gateway::{Backend, BackendConfig, CallStats, FixtureBackend, Gateway, HttpBackend};
use crate::store::MemoryStore;
use crate::verification::{self, VerificationConfig, VerificationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Live,
    Fixture,
}

pub fn default_fixture_dimension() -> usize {
    4096
}

fn default_run_timestamp() -> String {
    "1970-01-01T00:00:00Z".to_string()
}

/// Offline-mode settings. `run_timestamp` is fixed so a fixture run is a
/// pure function of (corpus, fixtures, config).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureSettings {
    #[serde(default = "default_fixture_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub chat_fixtures: Vec<PathBuf>,
    #[serde(default)]
    pub embedding_fixtures: Option<PathBuf>,
    #[serde(default = "default_run_timestamp")]
    pub run_timestamp: String,
}

impl Default for FixtureSettings {
    fn default() -> Self {
        Self {
            dimension: default_fixture_dimension(),
            chat_fixtures: Vec::new(),
            embedding_fixtures: None,
            run_timestamp: default_run_timestamp(),
        }
    }
}

/// Matching and grading choices for evaluation runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    #[serde(default)]
    pub matcher: FactMatcher,
    #[serde(default)]
    pub answer_judge: AnswerJudge,
}

fn default_window_turns() -> usize {
    50
}
fn default_workers() -> usize {
    4
}

/// All hyperparameters in one place. Loadable from TOML or JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mode: Mode,
    #[serde(default)]
    pub backend: Option<BackendConfig>,
    #[serde(default)]
    pub fixture: Option<FixtureSettings>,
    #[serde(default)]
    pub completion: CompletionConfig,
    #[serde(default)]
    pub verification: VerificationConfig,
    #[serde(default)]
    pub eval: EvalOptions,
    #[serde(default = "crate::store::default_retrieval_k")]
    pub retrieval_k: usize,
    #[serde(default = "default_window_turns")]
    pub window_turns: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

impl PipelineConfig {
    /// Offline defaults: fixture mode, synthetic embeddings, no recorded
    /// chat. Any chat call under this config misses loudly.
    pub fn offline_default() -> Self {
        Self {
            mode: Mode::Fixture,
            backend: None,
            fixture: Some(FixtureSettings::default()),
            completion: CompletionConfig::default(),
            verification: VerificationConfig::default(),
            eval: EvalOptions::default(),
            retrieval_k: crate::store::default_retrieval_k(),
            window_turns: default_window_turns(),
            workers: default_workers(),
        }
    }

    /// Load from a TOML (`.toml`) or JSON (`.json`) file. Relative fixture
    /// paths are resolved against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
        let is_json = path.extension().is_some_and(|ext| ext == "json");
        let mut config: PipelineConfig = if is_json {
            serde_json::from_str(&raw)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        if let (Some(dir), Some(fixture)) = (path.parent(), config.fixture.as_mut()) {
            for p in fixture.chat_fixtures.iter_mut() {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
            if let Some(p) = fixture.embedding_fixtures.as_mut() {
                if p.is_relative() {
                    *p = dir.join(&p);
                }
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::Live => {
                let backend = self.backend.as_ref().ok_or_else(|| {
                    Error::Config("mode = \"live\" requires a [backend] section".into())
                })?;
                backend.validate()?;
            }
            Mode::Fixture => {
                let fixture = self.fixture.as_ref().ok_or_else(|| {
                    Error::Config("mode = \"fixture\" requires a [fixture] section".into())
                })?;
                if fixture.dimension == 0 {
                    return Err(Error::Config("fixture.dimension must be > 0".into()));
                }
            }
        }
        self.completion.validate()?;
        self.verification.validate()?;
        if self.retrieval_k == 0 {
            return Err(Error::Config("retrieval_k must be positive".into()));
        }
        if self.window_turns == 0 {
            return Err(Error::Config("window_turns must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>> {
        self.validate()?;
        match self.mode {
            Mode::Live => {
                let backend = HttpBackend::new(self.backend.clone().expect("validated"))?;
                Ok(Arc::new(backend))
            }
            Mode::Fixture => {
                let settings = self.fixture.as_ref().expect("validated");
                let mut backend = FixtureBackend::new(settings.dimension);
                for path in &settings.chat_fixtures {
                    backend.load_chat_fixtures(path)?;
                }
                if let Some(path) = &settings.embedding_fixtures {
                    backend.load_embedding_fixtures(path)?;
                }
                Ok(Arc::new(backend))
            }
        }
    }

    /// Fixed in fixture mode; wall clock in live mode.
    pub fn run_timestamp(&self) -> String {
        match (&self.mode, &self.fixture) {
            (Mode::Fixture, Some(fixture)) => fixture.run_timestamp.clone(),
            _ => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            matcher: self.eval.matcher,
            answer_judge: self.eval.answer_judge,
            retrieval_k: self.retrieval_k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Extraction,
    Completion,
    Verification,
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "extraction" => Ok(Stage::Extraction),
            "completion" => Ok(Stage::Completion),
            "verification" => Ok(Stage::Verification),
            other => Err(Error::Config(format!(
                "unknown stage {other:?} (expected extraction, completion or verification)"
            ))),
        }
    }
}

/// Stage gating for a run. Flags remove stages; they never reorder them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOptions {
    #[serde(default)]
    pub stop_after: Option<Stage>,
    #[serde(default)]
    pub no_completion: bool,
    #[serde(default)]
    pub no_verification: bool,
    #[serde(default)]
    pub emit_alignment: bool,
    #[serde(default)]
    pub emit_verification: bool,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionArtifacts {
    pub store: MemoryStore,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment: Option<AlignmentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFailure {
    pub session_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sessions_total: usize,
    pub sessions_failed: Vec<SessionFailure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    /// Exactly the gateway's counters for this run.
    pub calls: CallStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub artifacts: Vec<SessionArtifacts>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    pub summary: RunSummary,
}

async fn process_session(
    session: &DialogueSession,
    config: &PipelineConfig,
    options: &StageOptions,
    gateway: &Gateway,
    run_timestamp: &str,
) -> Result<SessionArtifacts> {
    let context = ExtractionContext {
        window_turns: config.window_turns,
        run_timestamp: run_timestamp.to_string(),
    };
    let mut entries = extraction::extract_initial(session, &context, gateway).await?;
    let mut alignment = None;
    let mut verification_report = None;
    let mut warnings = Vec::new();

    if options.stop_after != Some(Stage::Extraction) {
        if !options.no_completion {
            // One align-and-recover round by default; extra rounds
            // re-align the merged candidates against what is still
            // uncovered.
            let mut recovered_total = 0usize;
            for _ in 0..config.completion.rounds {
                let report = completion::align(
                    &mut entries,
                    session,
                    &config.completion,
                    gateway,
                    run_timestamp,
                )
                .await?;
                let d_miss = completion::find_uncovered_turns(&report, session)?;
                if options.emit_alignment {
                    alignment = Some(report);
                }
                if d_miss.is_empty() {
                    break;
                }
                let supplementary = completion::recover_missing(
                    &d_miss,
                    session,
                    gateway,
                    run_timestamp,
                    recovered_total,
                )
                .await?;
                recovered_total += supplementary.len();
                entries = completion::merge_candidates(entries, supplementary);
            }
        }

        if !options.no_verification && options.stop_after != Some(Stage::Completion) {
            let (survivors, report) = verification::run_verification(
                entries,
                session,
                &config.verification,
                gateway,
                run_timestamp,
            )
            .await?;
            entries = survivors;
            warnings.extend(report.warnings.iter().cloned());
            if options.emit_verification {
                verification_report = Some(report);
            }
        }
    }

    let created_at = latest_timestamp(&entries).unwrap_or_else(|| run_timestamp.to_string());
    let store = MemoryStore::new(session.session_id.clone(), created_at, entries)?;
    Ok(SessionArtifacts {
        store,
        alignment,
        verification: verification_report,
        warnings,
    })
}

fn latest_timestamp(entries: &[MemoryEntry]) -> Option<String> {
    entries
        .iter()
        .filter_map(|e| {
            chrono::DateTime::parse_from_rfc3339(&e.created_timestamp)
                .ok()
                .map(|parsed| (parsed, e.created_timestamp.clone()))
        })
        .max_by_key(|(parsed, _)| *parsed)
        .map(|(_, raw)| raw)
}

/// Run the pipeline over a corpus. Each session either yields artifacts or
/// a recorded failure; other sessions continue. With gold annotations the
/// resulting stores are evaluated in gold order.
pub async fn run_pipeline(
    sessions: &[DialogueSession],
    gold: Option<&[GoldAnnotation]>,
    config: &PipelineConfig,
    options: &StageOptions,
    gateway: &Gateway,
) -> Result<RunOutput> {
    config.validate()?;
    let run_timestamp = config.run_timestamp();
    let workers = options.workers.unwrap_or(config.workers).max(1);

    let jobs: Vec<_> = sessions
        .iter()
        .map(|session| {
            let run_timestamp = run_timestamp.clone();
            async move {
                let outcome =
                    process_session(session, config, options, gateway, &run_timestamp).await;
                (session.session_id.clone(), outcome)
            }
        })
        .collect();
    let results: Vec<(String, Result<SessionArtifacts>)> = futures::stream::iter(jobs)
        .buffered(workers)
        .collect()
        .await;

    let mut artifacts = Vec::new();
    let mut failures = Vec::new();
    let mut warnings = Vec::new();
    for (session_id, result) in results {
        match result {
            Ok(artifact) => artifacts.push(artifact),
            Err(error) => failures.push(SessionFailure {
                session_id: session_id.clone(),
                error: format!("session {session_id}: {error}"),
            }),
        }
    }

    let eval_report = match gold {
        Some(gold) if !gold.is_empty() => {
            let mut pairs = Vec::new();
            for annotation in gold {
                match artifacts
                    .iter()
                    .find(|a| a.store.owner_id == annotation.session_id)
                {
                    Some(artifact) => pairs.push((annotation, &artifact.store)),
                    None => warnings.push(format!(
                        "gold annotation for session {:?} has no store to evaluate",
                        annotation.session_id
                    )),
                }
            }
            if pairs.is_empty() {
                warnings.push("no (gold, store) pairs to evaluate".into());
                None
            } else {
                Some(eval::evaluate_corpus(&pairs, &config.eval_settings(), gateway).await?)
            }
        }
        _ => None,
    };

    Ok(RunOutput {
        artifacts,
        eval: eval_report,
        summary: RunSummary {
            sessions_total: sessions.len(),
            sessions_failed: failures,
            warnings,
            calls: gateway.stats(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{DialogueTurn, Speaker};
    use crate::extraction::MemoryStatus;
    use crate::gateway::FixtureBackend;
    use crate::prompts;

    fn config() -> PipelineConfig {
        let mut config = PipelineConfig::offline_default();
        // Fat coverage margins for this fixture: the user turn scores
        // ~0.62 against its fact, the assistant ack ~0.33.
        config.completion.tau_match = 0.5;
        config
    }

    fn session() -> DialogueSession {
        DialogueSession {
            session_id: "s1".into(),
            turns: vec![
                DialogueTurn {
                    turn_index: 0,
                    speaker: Speaker::User,
                    text: "I train goshawks for falconry displays".into(),
                    timestamp: Some("2025-04-01T09:00:00Z".into()),
                },
                DialogueTurn {
                    turn_index: 1,
                    speaker: Speaker::Assistant,
                    text: "Goshawk falconry displays sound demanding".into(),
                    timestamp: Some("2025-04-01T09:01:00Z".into()),
                },
                DialogueTurn {
                    turn_index: 2,
                    speaker: Speaker::User,
                    text: "My bakery sells rye sourdough on fridays".into(),
                    timestamp: Some("2025-04-01T09:02:00Z".into()),
                },
            ],
        }
    }

    /// Fixtures for a full run where extraction finds the falconry fact,
    /// misses the bakery fact, and completion + verification recover it.
    /// D_miss is the assistant ack plus the bakery turn: only the first
    /// user turn clears tau_match against the one extracted fact.
    fn full_backend(s: &DialogueSession) -> FixtureBackend {
        let mut backend = FixtureBackend::new(4096);
        let fact_a = "User trains goshawks for falconry displays";
        let fact_b = "User's bakery sells rye sourdough on fridays";
        backend.insert_chat_for(prompts::EXTRACT, &s.transcript(), format!("[\"{fact_a}\"]"));
        let d_miss = crate::dialogue::render_transcript(&s.turns[1..]);
        backend.insert_chat_for(prompts::SUPPLEMENT, &d_miss, format!("[\"{fact_b}\"]"));
        for (fact, turns) in [(fact_a, vec![0usize, 1]), (fact_b, vec![2])] {
            let question = format!("What evidence supports: {fact}?");
            backend.insert_chat_for(prompts::QUESTION, fact, &question);
            let judge_payload = format!("Question: {question}\n\nDialogue:\n{}", s.transcript());
            backend.insert_chat_for(
                prompts::JUDGE,
                &judge_payload,
                serde_json::json!({"found": "yes", "answer": fact, "turns": turns}).to_string(),
            );
        }
        backend
    }

    #[tokio::test]
    async fn full_pipeline_produces_verified_grounded_store() {
        let s = session();
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &StageOptions::default(),
            &gateway,
        )
        .await
        .unwrap();

        assert!(output.summary.sessions_failed.is_empty());
        let store = &output.artifacts[0].store;
        assert_eq!(store.entries.len(), 2);
        assert!(store
            .entries
            .iter()
            .all(|e| e.status == MemoryStatus::Verified));
        assert!(store
            .entries
            .iter()
            .all(|e| !e.source_turn_indices.is_empty()));
        // created_at is the latest evidence timestamp, not wall clock.
        assert_eq!(store.created_at, "2025-04-01T09:02:00Z");
        assert_eq!(output.summary.calls, gateway.stats());
    }

    #[tokio::test]
    async fn stop_after_extraction_stores_initial_entries_only() {
        let s = session();
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let options = StageOptions {
            stop_after: Some(Stage::Extraction),
            ..Default::default()
        };
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &options,
            &gateway,
        )
        .await
        .unwrap();
        let store = &output.artifacts[0].store;
        assert_eq!(store.entries.len(), 1);
        assert!(store
            .entries
            .iter()
            .all(|e| e.status == MemoryStatus::Initial));
        // Only the extraction chat call happened.
        assert_eq!(output.summary.calls.chat_calls, 1);
        assert_eq!(output.summary.calls.embed_requests, 0);
    }

    #[tokio::test]
    async fn ablation_flags_gate_stages_without_reordering() {
        let s = session();

        // w/o completion: no supplement call, but verification still runs.
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let options = StageOptions {
            no_completion: true,
            ..Default::default()
        };
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &options,
            &gateway,
        )
        .await
        .unwrap();
        let store = &output.artifacts[0].store;
        assert_eq!(store.entries.len(), 1);
        assert!(store
            .entries
            .iter()
            .all(|e| e.status == MemoryStatus::Verified));
        // extract + question + judge.
        assert_eq!(output.summary.calls.chat_calls, 3);

        // w/o verification: candidates pass through unmodified.
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let options = StageOptions {
            no_verification: true,
            ..Default::default()
        };
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &options,
            &gateway,
        )
        .await
        .unwrap();
        let store = &output.artifacts[0].store;
        assert_eq!(store.entries.len(), 2);
        assert!(store
            .entries
            .iter()
            .all(|e| e.status != MemoryStatus::Verified));

        // Both off: the one-pass baseline.
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let options = StageOptions {
            no_completion: true,
            no_verification: true,
            ..Default::default()
        };
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &options,
            &gateway,
        )
        .await
        .unwrap();
        assert_eq!(output.summary.calls.chat_calls, 1);
        assert_eq!(output.artifacts[0].store.entries.len(), 1);
    }

    #[tokio::test]
    async fn failed_session_is_recorded_and_others_continue() {
        let good = session();
        let bad = DialogueSession {
            session_id: "s2".into(),
            turns: vec![DialogueTurn {
                turn_index: 0,
                speaker: Speaker::User,
                text: "no fixture exists for this session".into(),
                timestamp: None,
            }],
        };
        let gateway = Gateway::new(Arc::new(full_backend(&good)));
        let output = run_pipeline(
            &[bad, good],
            None,
            &config(),
            &StageOptions::default(),
            &gateway,
        )
        .await
        .unwrap();
        assert_eq!(output.artifacts.len(), 1);
        assert_eq!(output.summary.sessions_failed.len(), 1);
        assert_eq!(output.summary.sessions_failed[0].session_id, "s2");
        assert!(output.summary.sessions_failed[0]
            .error
            .contains("fixture miss"));
    }

    #[tokio::test]
    async fn emit_flags_attach_reports() {
        let s = session();
        let gateway = Gateway::new(Arc::new(full_backend(&s)));
        let options = StageOptions {
            emit_alignment: true,
            emit_verification: true,
            ..Default::default()
        };
        let output = run_pipeline(
            std::slice::from_ref(&s),
            None,
            &config(),
            &options,
            &gateway,
        )
        .await
        .unwrap();
        let artifact = &output.artifacts[0];
        let alignment = artifact.alignment.as_ref().unwrap();
        assert_eq!(alignment.per_turn.len(), s.turns.len());
        assert!(artifact.verification.is_some());
    }

    #[test]
    fn config_files_load_from_toml_and_json() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("config.toml");
        std::fs::write(
            &toml_path,
            "mode = \"fixture\"\n[fixture]\ndimension = 128\nchat_fixtures = [\"chat.jsonl\"]\n",
        )
        .unwrap();
        let config = PipelineConfig::load(&toml_path).unwrap();
        assert_eq!(config.fixture.as_ref().unwrap().dimension, 128);
        // Relative fixture paths resolve against the config directory.
        assert_eq!(
            config.fixture.as_ref().unwrap().chat_fixtures[0],
            dir.path().join("chat.jsonl")
        );
        assert_eq!(config.retrieval_k, 20);
        assert_eq!(config.window_turns, 50);
        assert_eq!(config.completion.tau_match, 0.6);
        assert_eq!(config.verification.tau_sim, 0.8);

        let json_path = dir.path().join("config.json");
        std::fs::write(
            &json_path,
            r#"{"mode":"fixture","fixture":{"dimension":64}}"#,
        )
        .unwrap();
        let config = PipelineConfig::load(&json_path).unwrap();
        assert_eq!(config.fixture.as_ref().unwrap().dimension, 64);
    }

    #[test]
    fn live_mode_without_backend_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        std::fs::write(&path, "mode = \"live\"\n").unwrap();
        assert!(matches!(
            PipelineConfig::load(&path).unwrap_err(),
            Error::Config(_)
        ));
    }
}
