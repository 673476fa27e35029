//! Wire contract for the HTTP service. Sessions and gold annotations
//! travel as raw JSONL strings so the server owns parsing and positioned
//! errors; results come back as the same structures the library produces.

use serde::{Deserialize, Serialize};

use crate::eval::EvalReport;
use crate::pipeline::{RunSummary, SessionArtifacts, StageOptions};
use crate::store::{MemoryStore, RetrievalResult};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub version: String,
    pub mode: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRequest {
    /// JSONL, one dialogue turn per line.
    pub sessions_jsonl: String,
    /// JSONL, one gold annotation per line; enables evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_jsonl: Option<String>,
    #[serde(default)]
    pub options: StageOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResponse {
    pub artifacts: Vec<SessionArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalReport>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaRequest {
    pub store: MemoryStore,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaResponse {
    pub answer: String,
    pub retrieved: RetrievalResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRequest {
    pub stores: Vec<MemoryStore>,
    pub gold_jsonl: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResponse {
    pub report: EvalReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressRequest {
    pub sessions_jsonl: String,
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressResponse {
    pub sessions_jsonl: String,
}

/// Error envelope every endpoint uses: `kind` is the stable error tag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub kind: String,
    pub error: String,
}
