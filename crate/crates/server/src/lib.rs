//! HTTP/JSON front end over the core operations.
//!
//! Every route takes and returns JSON. Training and search run on the
//! blocking pool; evaluators (and their on-disk caches) are shared per
//! configuration digest, so concurrent requests reuse each other's work.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use curriculum_core::api::{
    ApiError, EnumerateRequest, EnumerateResponse, EvaluateRequest, EvaluateResponse, Health, OptimizeRequest,
    OptimizeResponse, ReportRequest, ReportResponse, SolveRequest, SolveResponse,
};
use curriculum_core::cache::EvalCache;
use curriculum_core::curriculum::feasible_count;
use curriculum_core::error::Error;
use curriculum_core::eval::Evaluator;
use curriculum_core::experiment::{build_report, cache_path, estimate_path, run_algorithm, with_workers, ExperimentConfig};
use curriculum_core::schedule::{decode, solve};
use tokio::net::TcpListener;

#[derive(Debug, Clone, Default)]
pub struct ServerConfig {
    /// Directory for persistent evaluation caches and heuristic estimates;
    /// in-memory caches when absent.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Default)]
struct AppState {
    config: ServerConfig,
    evaluators: Mutex<HashMap<String, Arc<Evaluator>>>,
}

impl AppState {
    /// Shared evaluator for `cfg`, opened on first use.
    fn evaluator(&self, cfg: &ExperimentConfig) -> Result<Arc<Evaluator>, Error> {
        cfg.validate()?;
        let lib = cfg.library()?;
        let regret = cfg.regret_config();
        let digest = Evaluator::new(lib.clone(), regret.clone(), None)?.digest().to_string();
        let mut map = self.evaluators.lock().expect("evaluator map poisoned");
        if let Some(ev) = map.get(&digest) {
            return Ok(ev.clone());
        }
        let cache = match &self.config.cache_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
                let (cache, report) = EvalCache::open(cache_path(dir, &digest))?;
                tracing::info!(digest = %digest, records = report.records, "opened evaluation cache");
                cache
            }
            None => EvalCache::in_memory(),
        };
        let ev = Arc::new(Evaluator::new(lib, regret, Some(Arc::new(cache)))?);
        map.insert(digest, ev.clone());
        Ok(ev)
    }

    fn estimate_file(&self, digest: &str) -> Option<PathBuf> {
        self.config.cache_dir.as_deref().map(|d| estimate_path(d, digest))
    }
}

/// Error response: 422 for problems with the request, 500 otherwise.
pub struct AppError {
    status: StatusCode,
    body: ApiError,
}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        let user_error = e.is_user_error();
        let status = if user_error { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::INTERNAL_SERVER_ERROR };
        if !user_error {
            tracing::error!(error = %e, "request failed");
        }
        AppError { status, body: ApiError { error: e.to_string(), user_error } }
    }
}

impl From<JsonRejection> for AppError {
    fn from(r: JsonRejection) -> Self {
        AppError { status: r.status(), body: ApiError { error: r.body_text(), user_error: true } }
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, AppError>;

/// Run CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> Result<T, AppError> {
    match tokio::task::spawn_blocking(move || with_workers(f)).await {
        Ok(Ok(inner)) => inner.map_err(AppError::from),
        Ok(Err(e)) => Err(e.into()),
        Err(join) => Err(AppError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ApiError { error: format!("worker failed: {join}"), user_error: false },
        }),
    }
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn enumerate(body: Result<Json<EnumerateRequest>, JsonRejection>) -> Reply<EnumerateResponse> {
    let Json(req) = body?;
    req.config.validate()?;
    let lib = req.config.library()?;
    Ok(Json(EnumerateResponse { n: lib.n(), max_length: lib.max_length, feasible: feasible_count(lib.n(), lib.max_length) }))
}

async fn evaluate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<EvaluateRequest>, JsonRejection>,
) -> Reply<EvaluateResponse> {
    let Json(req) = body?;
    let ev = state.evaluator(&req.config)?;
    let (result, cache_hit) = blocking(move || ev.evaluate(&req.curriculum)).await?;
    Ok(Json(EvaluateResponse { result, cache_hit }))
}

async fn optimize(
    State(state): State<Arc<AppState>>,
    body: Result<Json<OptimizeRequest>, JsonRejection>,
) -> Reply<OptimizeResponse> {
    let Json(req) = body?;
    let ev = state.evaluator(&req.config)?;
    let estimate = state.estimate_file(ev.digest());
    tracing::info!(algorithm = %req.algorithm, budget = ?req.budget, "optimize");
    let run = blocking(move || run_algorithm(&ev, &req.config, req.algorithm, req.budget, estimate.as_deref())).await?;
    Ok(Json(run))
}

async fn report(body: Result<Json<ReportRequest>, JsonRejection>) -> Reply<ReportResponse> {
    let Json(req) = body?;
    Ok(Json(build_report(&req.traces)))
}

async fn solve_schedule(body: Result<Json<SolveRequest>, JsonRejection>) -> Reply<SolveResponse> {
    let Json(req) = body?;
    let max_len = req.instance.max_length;
    let (solution, curriculum) = blocking(move || {
        let sol = solve(&req.instance.up, max_len)?;
        let c = decode(&sol, max_len)?;
        Ok((sol, c))
    })
    .await?;
    Ok(Json(SolveResponse { solution, curriculum }))
}

pub fn router(config: ServerConfig) -> Router {
    let state = Arc::new(AppState { config, evaluators: Mutex::new(HashMap::new()) });
    Router::new()
        .route("/health", get(health))
        .route("/v1/enumerate", post(enumerate))
        .route("/v1/evaluate", post(evaluate))
        .route("/v1/optimize", post(optimize))
        .route("/v1/report", post(report))
        .route("/v1/solve", post(solve_schedule))
        .with_state(state)
}

/// Serve on an already-bound listener until the process ends.
pub async fn serve(listener: TcpListener, config: ServerConfig) -> std::io::Result<()> {
    axum::serve(listener, router(config)).await
}

/// A server on its own runtime thread, bound to an ephemeral local port.
pub struct Background {
    pub addr: SocketAddr,
}

impl Background {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

/// Start a server on 127.0.0.1 with an OS-chosen port; it lives as long as the process.
pub fn spawn_background(cache_dir: Option<&Path>) -> std::io::Result<Background> {
    let config = ServerConfig { cache_dir: cache_dir.map(Path::to_path_buf) };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    let listener = runtime.block_on(TcpListener::bind("127.0.0.1:0"))?;
    let addr = listener.local_addr()?;
    std::thread::Builder::new().name("curriculum-server".into()).spawn(move || {
        if let Err(e) = runtime.block_on(serve(listener, config)) {
            tracing::error!(error = %e, "embedded server stopped");
        }
    })?;
    Ok(Background { addr })
}

/// Install a `RUST_LOG`-driven subscriber; harmless if one already exists.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}
