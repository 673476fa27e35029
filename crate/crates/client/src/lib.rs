//! Thin typed client for the memloop HTTP service.

use memloop_core::api::{
    ApiError, CompressRequest, CompressResponse, EvalRequest, EvalResponse, HealthResponse,
    QaRequest, QaResponse, RunRequest, RunResponse,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport error: {0}")]
    Transport(#[from] reqwest::Error),

    /// The service answered with its error envelope.
    #[error("service error ({kind}, http {status}): {message}")]
    Api {
        status: u16,
        kind: String,
        message: String,
    },

    #[error("undecodable response (http {status}): {body}")]
    Decode { status: u16, body: String },
}

#[derive(Debug, Clone)]
pub struct Client {
    base_url: String,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
        let status = response.status().as_u16();
        let body = response.text().await?;
        if (200..300).contains(&status) {
            serde_json::from_str(&body).map_err(|_| ClientError::Decode { status, body })
        } else if let Ok(envelope) = serde_json::from_str::<ApiError>(&body) {
            Err(ClientError::Api {
                status,
                kind: envelope.kind,
                message: envelope.error,
            })
        } else {
            Err(ClientError::Decode { status, body })
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<T, ClientError> {
        let response = self
            .http
            .post(format!("{}{path}", self.base_url))
            .json(body)
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        let response = self
            .http
            .get(format!("{}/healthz", self.base_url))
            .send()
            .await?;
        Self::decode(response).await
    }

    pub async fn run(&self, request: &RunRequest) -> Result<RunResponse, ClientError> {
        self.post("/v1/pipeline/run", request).await
    }

    pub async fn qa(&self, request: &QaRequest) -> Result<QaResponse, ClientError> {
        self.post("/v1/qa", request).await
    }

    pub async fn eval(&self, request: &EvalRequest) -> Result<EvalResponse, ClientError> {
        self.post("/v1/eval", request).await
    }

    pub async fn compress(
        &self,
        request: &CompressRequest,
    ) -> Result<CompressResponse, ClientError> {
        self.post("/v1/compress", request).await
    }
}
