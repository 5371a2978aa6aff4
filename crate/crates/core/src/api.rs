//! Request and response bodies of the HTTP/JSON service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curriculum::Curriculum;
use crate::eval::EvalResult;
use crate::experiment::{AlgorithmRun, ExperimentConfig, ReportTable};
use crate::optim::{Algorithm, TraceRecord};
use crate::schedule::{ScheduleInstance, ScheduleSolution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerateRequest {
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerateResponse {
    pub n: usize,
    pub max_length: usize,
    pub feasible: u128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    pub config: ExperimentConfig,
    pub curriculum: Curriculum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateResponse {
    pub result: EvalResult,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeRequest {
    pub config: ExperimentConfig,
    pub algorithm: Algorithm,
    #[serde(default)]
    pub budget: Option<usize>,
}

pub type OptimizeResponse = AlgorithmRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRequest {
    pub traces: BTreeMap<Algorithm, Vec<TraceRecord>>,
}

pub type ReportResponse = ReportTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub instance: ScheduleInstance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub solution: ScheduleSolution,
    pub curriculum: Curriculum,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    /// True when the request itself was at fault (bad config, infeasible input).
    pub user_error: bool,
}
