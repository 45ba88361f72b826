//! HTTP facade over prepared datasets, their subpopulations and target
//! models, a finished sweep store, and live single-attack runs.
//!
//! Endpoints (all JSON unless noted):
//!
//! - `GET /datasets`, `GET /datasets/{id}/subpops`, `GET /subpops/{ref}/targets`,
//!   `GET /results`, `GET /runs`: cursor-paginated lists (`?cursor=&limit=`).
//! - `POST /runs`: submit an attack, see [`RunRequest`].
//! - `GET /runs/{id}`: the run handle; `GET /runs/{id}/record`: the attack record
//!   once the run has finished; `POST /runs/{id}/cancel`.
//! - `GET /runs/{id}/trace?from=seq`: newline-delimited JSON events with
//!   `seq > from`, held open until the final summary event.
//!
//! A subpopulation ref is `{dataset}:{ordinal}`, the ordinal being the
//! subpopulation's position in its dataset's manifest.

mod catalog;
mod error;
mod page;
mod runs;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use subpop::harness::PipelineConfig;

pub use catalog::{Catalog, DatasetInfo, SubpopInfo, TargetInfo};
pub use error::ApiError;
pub use page::{Page, PageQuery, DEFAULT_PAGE_SIZE, MAX_PAGE_SIZE};
pub use runs::{
    AttackKind, EventBody, Progress, RunHandle, RunParams, RunRequest, RunState, RunSummary, StreamEvent, TargetRef,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Root holding prepared dataset directories.
    pub datasets: PathBuf,
    /// Sweep store served under `/results`, if any.
    pub store: Option<PathBuf>,
    /// Directory finished runs are persisted to.
    pub runs: PathBuf,
    /// Attacks executing at once.
    pub workers: usize,
    /// Target generation, feasible set and KKT settings for runs.
    pub pipeline: PipelineConfig,
}

pub struct AppState {
    catalog: Catalog,
    runs: runs::Registry,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    /// Loads every dataset workspace, the optional store and persisted runs.
    pub fn load(config: &ServiceConfig) -> subpop::Result<SharedState> {
        let catalog = Catalog::load(&config.datasets, config.store.as_deref(), config.pipeline.clone())?;
        let runs = runs::Registry::load(&config.runs, config.workers)?;
        Ok(Arc::new(Self { catalog, runs }))
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/datasets/{id}/subpops", get(list_subpops))
        .route("/subpops/{subpop}/targets", get(list_targets))
        .route("/results", get(list_results))
        .route("/runs", get(list_runs).post(submit_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/record", get(get_record))
        .route("/runs/{id}/cancel", post(cancel_run))
        .route("/runs/{id}/trace", get(stream_trace))
        .with_state(state)
}

/// Binds `config.addr` and serves until the process is stopped.
pub async fn serve(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let state = tokio::task::block_in_place(|| AppState::load(&config))?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

async fn list_datasets(State(s): State<SharedState>, Query(q): Query<PageQuery>) -> Result<Json<Page<DatasetInfo>>, ApiError> {
    Ok(Json(Page::of(s.catalog.datasets(), &q)?))
}

async fn list_subpops(
    State(s): State<SharedState>,
    Path(id): Path<String>,
    Query(q): Query<PageQuery>,
) -> Result<Json<Page<SubpopInfo>>, ApiError> {
    Ok(Json(Page::of(s.catalog.subpops(&id)?, &q)?))
}

async fn list_targets(
    State(s): State<SharedState>,
    Path(subpop): Path<String>,
    Query(q): Query<PageQuery>,
) -> Result<Json<Page<TargetInfo>>, ApiError> {
    let (ds, ordinal) = catalog::parse_subpop_ref(&subpop)?;
    let targets = catalog::load_targets(s.clone(), ds, ordinal).await?;
    let infos: Vec<TargetInfo> = targets.iter().enumerate().map(|(i, t)| TargetInfo::new(i, t)).collect();
    Ok(Json(Page::of(infos, &q)?))
}

#[derive(Debug, Deserialize)]
struct ResultsQuery {
    dataset: Option<String>,
    cursor: Option<String>,
    limit: Option<usize>,
}

async fn list_results(
    State(s): State<SharedState>,
    Query(q): Query<ResultsQuery>,
) -> Result<Json<Page<subpop::harness::IndexEntry>>, ApiError> {
    let entries: Vec<_> =
        s.catalog.results().into_iter().filter(|e| q.dataset.as_ref().is_none_or(|d| &e.dataset == d)).collect();
    Ok(Json(Page::of(entries, &PageQuery { cursor: q.cursor, limit: q.limit })?))
}

async fn list_runs(State(s): State<SharedState>, Query(q): Query<PageQuery>) -> Result<Json<Page<RunHandle>>, ApiError> {
    Ok(Json(Page::of(s.runs.handles(), &q)?))
}

async fn submit_run(
    State(s): State<SharedState>,
    headers: HeaderMap,
    Json(mut req): Json<RunRequest>,
) -> Result<Response, ApiError> {
    if let Some(key) = headers.get("idempotency-key") {
        let key = key.to_str().map_err(|_| ApiError::BadRequest("idempotency key is not valid text".into()))?;
        req.idempotency_key = Some(key.to_string());
    }
    let handle = runs::submit(s.clone(), req).await?;
    Ok((StatusCode::ACCEPTED, Json(handle)).into_response())
}

async fn get_run(State(s): State<SharedState>, Path(id): Path<String>) -> Result<Json<RunHandle>, ApiError> {
    Ok(Json(s.runs.get(&id)?.handle()))
}

async fn get_record(
    State(s): State<SharedState>,
    Path(id): Path<String>,
) -> Result<Json<subpop::attacks::AttackRecord>, ApiError> {
    let run = s.runs.get(&id)?;
    run.record().map(Json).ok_or_else(|| ApiError::NotFound(format!("run {id} has no attack record")))
}

async fn cancel_run(State(s): State<SharedState>, Path(id): Path<String>) -> Result<Json<RunHandle>, ApiError> {
    let run = s.runs.get(&id)?;
    run.cancel();
    Ok(Json(run.handle()))
}

#[derive(Debug, Deserialize)]
struct TraceQuery {
    #[serde(default)]
    from: u64,
}

async fn stream_trace(
    State(s): State<SharedState>,
    Path(id): Path<String>,
    Query(q): Query<TraceQuery>,
) -> Result<Response, ApiError> {
    let run = s.runs.get(&id)?;
    let body = Body::from_stream(runs::event_stream(run, q.from));
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}
