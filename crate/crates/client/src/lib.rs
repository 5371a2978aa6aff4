//! Thin blocking client for the curriculum service.

use std::collections::BTreeMap;
use std::time::Duration;

use curriculum_core::api::{
    ApiError, EnumerateRequest, EnumerateResponse, EvaluateRequest, EvaluateResponse, Health, OptimizeRequest,
    OptimizeResponse, ReportRequest, ReportResponse, SolveRequest, SolveResponse,
};
use curriculum_core::curriculum::Curriculum;
use curriculum_core::experiment::ExperimentConfig;
use curriculum_core::optim::{Algorithm, TraceRecord};
use curriculum_core::schedule::ScheduleInstance;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {source}")]
    Transport {
        url: String,
        #[source]
        source: reqwest::Error,
    },
    /// The service answered with an error status.
    #[error("{message} (HTTP {status})")]
    Api { status: u16, message: String, user_error: bool },
    #[error("unreadable response from {url}: {source}")]
    Decode {
        url: String,
        #[source]
        source: reqwest::Error,
    },
}

impl ClientError {
    /// True when the request was rejected because of its content.
    pub fn is_user_error(&self) -> bool {
        matches!(self, ClientError::Api { user_error: true, .. })
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Result<Self> {
        let base = base.into().trim_end_matches('/').to_string();
        // optimization requests can run for many minutes
        let http = reqwest::blocking::Client::builder()
            .timeout(None::<Duration>)
            .build()
            .map_err(|source| ClientError::Transport { url: base.clone(), source })?;
        Ok(Client { base, http })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    pub fn health(&self) -> Result<Health> {
        let url = format!("{}/health", self.base);
        let resp = self.http.get(&url).send().map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        decode(url, resp)
    }

    pub fn enumerate(&self, config: &ExperimentConfig) -> Result<EnumerateResponse> {
        self.post("/v1/enumerate", &EnumerateRequest { config: config.clone() })
    }

    pub fn evaluate(&self, config: &ExperimentConfig, curriculum: &Curriculum) -> Result<EvaluateResponse> {
        self.post("/v1/evaluate", &EvaluateRequest { config: config.clone(), curriculum: curriculum.clone() })
    }

    pub fn optimize(&self, config: &ExperimentConfig, algorithm: Algorithm, budget: Option<usize>) -> Result<OptimizeResponse> {
        self.post("/v1/optimize", &OptimizeRequest { config: config.clone(), algorithm, budget })
    }

    pub fn report(&self, traces: &BTreeMap<Algorithm, Vec<TraceRecord>>) -> Result<ReportResponse> {
        self.post("/v1/report", &ReportRequest { traces: traces.clone() })
    }

    pub fn solve(&self, instance: &ScheduleInstance) -> Result<SolveResponse> {
        self.post("/v1/solve", &SolveRequest { instance: instance.clone() })
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let url = format!("{}{path}", self.base);
        let resp =
            self.http.post(&url).json(body).send().map_err(|source| ClientError::Transport { url: url.clone(), source })?;
        decode(url, resp)
    }
}

fn decode<T: DeserializeOwned>(url: String, resp: reqwest::blocking::Response) -> Result<T> {
    let status = resp.status();
    if status.is_success() {
        return resp.json().map_err(|source| ClientError::Decode { url, source });
    }
    let text = resp.text().unwrap_or_default();
    let (message, user_error) = match serde_json::from_str::<ApiError>(&text).ok() {
        Some(e) => (e.error, e.user_error),
        None => (if text.is_empty() { status.to_string() } else { text }, status.is_client_error()),
    };
    Err(ClientError::Api { status: status.as_u16(), message, user_error })
}
