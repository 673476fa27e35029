//! HTTP service over the pipeline. One shared backend lives in app state;
//! each request gets its own [`Gateway`] so call accounting and the
//! embedding cache are scoped to that request's run.
//!
//! Routes:
//! - `GET  /healthz`
//! - `POST /v1/pipeline/run`
//! - `POST /v1/qa`
//! - `POST /v1/eval`
//! - `POST /v1/compress`

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use memloop_core::api::{
    ApiError, CompressRequest, CompressResponse, EvalRequest, EvalResponse, HealthResponse,
    QaRequest, QaResponse, RunRequest, RunResponse,
};
use memloop_core::compressor::{compress_session, CompressionConfig};
use memloop_core::dialogue;
use memloop_core::eval;
use memloop_core::gateway::{Backend, Gateway};
use memloop_core::pipeline::{run_pipeline, Mode, PipelineConfig};
use memloop_core::store;
use memloop_core::Error;

pub struct AppState {
    pub config: PipelineConfig,
    pub backend: Arc<dyn Backend>,
}

impl AppState {
    pub fn new(config: PipelineConfig) -> Result<Self, Error> {
        let backend = config.build_backend()?;
        Ok(Self { config, backend })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(health))
        .route("/v1/pipeline/run", post(run))
        .route("/v1/qa", post(qa))
        .route("/v1/eval", post(eval_stores))
        .route("/v1/compress", post(compress))
        .with_state(state)
}

/// Bind and serve until the task is aborted or the process exits.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

struct ServiceError(Error);

impl From<Error> for ServiceError {
    fn from(error: Error) -> Self {
        Self(error)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::Parse { .. }
            | Error::Validation(_)
            | Error::Schema { .. }
            | Error::Config(_) => StatusCode::BAD_REQUEST,
            Error::BackendUnavailable(_)
            | Error::FixtureMiss { .. }
            | Error::BackendProtocol(_)
            | Error::ExtractionFormat { .. }
            | Error::VerificationFormat(_) => StatusCode::BAD_GATEWAY,
            Error::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = ApiError {
            kind: self.0.kind().to_string(),
            error: self.0.to_string(),
        };
        (status, Json(body)).into_response()
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".into(),
        version: store::PIPELINE_VERSION.into(),
        mode: match state.config.mode {
            Mode::Live => "live".into(),
            Mode::Fixture => "fixture".into(),
        },
    })
}

async fn run(
    State(state): State<Arc<AppState>>,
    Json(request): Json<RunRequest>,
) -> Result<Json<RunResponse>, ServiceError> {
    let sessions = dialogue::parse_sessions_jsonl(&request.sessions_jsonl, "sessions_jsonl")?;
    let gold = request
        .gold_jsonl
        .as_deref()
        .map(|raw| eval::parse_gold_jsonl(raw, "gold_jsonl"))
        .transpose()?;
    let gateway = Gateway::new(state.backend.clone());
    let output = run_pipeline(
        &sessions,
        gold.as_deref(),
        &state.config,
        &request.options,
        &gateway,
    )
    .await?;
    Ok(Json(RunResponse {
        artifacts: output.artifacts,
        eval: output.eval,
        summary: output.summary,
    }))
}

async fn qa(
    State(state): State<Arc<AppState>>,
    Json(request): Json<QaRequest>,
) -> Result<Json<QaResponse>, ServiceError> {
    request.store.validate("qa request store")?;
    let k = request.k.unwrap_or(state.config.retrieval_k);
    let gateway = Gateway::new(state.backend.clone());
    let retrieved = store::retrieve_top_k(&request.store, &request.question, k, &gateway).await?;
    let answer = store::answer_question(&request.store, &request.question, k, &gateway).await?;
    Ok(Json(QaResponse { answer, retrieved }))
}

async fn eval_stores(
    State(state): State<Arc<AppState>>,
    Json(request): Json<EvalRequest>,
) -> Result<Json<EvalResponse>, ServiceError> {
    let gold = eval::parse_gold_jsonl(&request.gold_jsonl, "gold_jsonl")?;
    for s in &request.stores {
        s.validate("eval request store")?;
    }
    let mut pairs = Vec::new();
    for annotation in &gold {
        let Some(store) = request
            .stores
            .iter()
            .find(|s| s.owner_id == annotation.session_id)
        else {
            return Err(Error::Validation(format!(
                "no store with owner_id {:?} for that gold annotation",
                annotation.session_id
            ))
            .into());
        };
        pairs.push((annotation, store));
    }
    if pairs.is_empty() {
        return Err(Error::Validation("gold_jsonl contains no annotations".into()).into());
    }
    let settings = eval::EvalSettings {
        matcher: state.config.eval.matcher,
        answer_judge: state.config.eval.answer_judge,
        retrieval_k: state.config.retrieval_k,
    };
    let gateway = Gateway::new(state.backend.clone());
    let report = eval::evaluate_corpus(&pairs, &settings, &gateway).await?;
    Ok(Json(EvalResponse { report }))
}

async fn compress(
    Json(request): Json<CompressRequest>,
) -> Result<Json<CompressResponse>, ServiceError> {
    let sessions = dialogue::parse_sessions_jsonl(&request.sessions_jsonl, "sessions_jsonl")?;
    let config = CompressionConfig {
        ratio: request.ratio,
        seed: request.seed,
    };
    let compressed: Vec<_> = sessions
        .iter()
        .map(|s| compress_session(s, &config))
        .collect::<Result<_, _>>()?;
    Ok(Json(CompressResponse {
        sessions_jsonl: dialogue::serialize_sessions(&compressed),
    }))
}
