//! HTTP query service over an ingested dataset.
//!
//! All endpoints live under `/api/v1`. Responses are computed once per
//! (dataset, config, request) and served from a byte cache afterwards, so a
//! repeated request returns identical bytes.

pub mod cache;
pub mod error;
pub mod views;

use std::collections::{BTreeSet, HashMap};
use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hoflow_core::ingest::DayType;
use hoflow_core::time::TimeWindow;
use hoflow_core::{ClusterId, Dataset, DatasetError, RunConfig, Workspace};
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use error::ApiError;

/// File written by `ingest` and read by the service.
pub const DATASET_FILE: &str = "dataset.json";
/// Subdirectory of the data directory holding persisted responses.
pub const CACHE_DIR: &str = "cache";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no dataset at {0}; run `hoflow ingest --out <DIR>` first")]
    MissingDataset(PathBuf),
    #[error("unable to read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Immutable dataset plus configuration that requests are answered from.
pub struct Snapshot {
    pub workspace: Workspace,
    /// Digest of dataset content and configuration; part of every cache key.
    pub fingerprint: String,
}

impl Snapshot {
    pub fn new(dataset: Dataset, config: RunConfig) -> Result<Self, ServiceError> {
        let bytes = dataset.to_json()?;
        Ok(Self::with_digest(dataset, config, &bytes))
    }

    fn with_digest(dataset: Dataset, config: RunConfig, dataset_bytes: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(dataset_bytes);
        h.update(serde_json::to_vec(&config).expect("config serializes"));
        let fingerprint = hex::encode(&h.finalize()[..8]);
        Self {
            workspace: Workspace::new(dataset, config),
            fingerprint,
        }
    }

    /// Load `DATASET_FILE` from `data_dir`.
    pub fn load(data_dir: &Path, config: RunConfig) -> Result<Self, ServiceError> {
        let path = data_dir.join(DATASET_FILE);
        if !path.is_file() {
            return Err(ServiceError::MissingDataset(path));
        }
        let bytes = std::fs::read(&path).map_err(|source| ServiceError::Io {
            path: path.clone(),
            source,
        })?;
        let dataset = Dataset::from_json(bytes.as_slice())?;
        Ok(Self::with_digest(dataset, config, &bytes))
    }
}

struct Inner {
    snapshot: RwLock<Arc<Snapshot>>,
    cache: ResponseCache,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(snapshot: Snapshot, cache: ResponseCache) -> Self {
        Self {
            inner: Arc::new(Inner {
                snapshot: RwLock::new(Arc::new(snapshot)),
                cache,
            }),
        }
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.inner.snapshot.read().expect("snapshot lock").clone()
    }

    /// Atomically replace the served snapshot.
    pub fn publish(&self, snapshot: Snapshot) {
        *self.inner.snapshot.write().expect("snapshot lock") = Arc::new(snapshot);
        self.inner.cache.clear();
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.inner.cache
    }

    async fn respond<F>(
        &self,
        snap: Arc<Snapshot>,
        key: String,
        render: F,
    ) -> Result<Response, ApiError>
    where
        F: FnOnce(&Workspace) -> Result<Vec<u8>, ApiError> + Send + 'static,
    {
        let full_key = format!("{}|{key}", snap.fingerprint);
        let bytes = self
            .inner
            .cache
            .get_or_compute(&full_key, move || render(&snap.workspace))
            .await?;
        Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/datasets", get(datasets))
        .route("/api/v1/regions", get(regions))
        .route("/api/v1/regions/{id}/stats", get(region_stats))
        .route("/api/v1/timeline", get(timeline))
        .route("/api/v1/patterns/global", get(global_patterns))
        .route("/api/v1/patterns/local", post(local_patterns))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

type Params = HashMap<String, String>;

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, ApiError> {
    serde_json::to_vec(value).map_err(|e| ApiError::internal(e.to_string()))
}

fn parse_level(raw: Option<&str>) -> Result<usize, ApiError> {
    match raw {
        None => Ok(1),
        Some(s) => s
            .parse()
            .ok()
            .filter(|l| *l >= 1)
            .ok_or_else(|| ApiError::bad_request(format!("invalid level `{s}`"))),
    }
}

fn parse_window(ws: &Workspace, raw: Option<&str>) -> Result<TimeWindow, ApiError> {
    let width = ws.config.hon.bin_width_minutes;
    match raw {
        None | Some("") => Ok(TimeWindow::whole_day(width)),
        Some(s) => TimeWindow::parse(s, width).map_err(|e| ApiError::bad_request(e.to_string())),
    }
}

fn parse_day_type(raw: Option<&str>) -> Result<Option<DayType>, ApiError> {
    match raw {
        None | Some("") | Some("all") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| ApiError::bad_request(format!("invalid day_type `{s}`"))),
    }
}

fn day_key(d: Option<DayType>) -> &'static str {
    d.map_or("all", DayType::as_str)
}

fn parse_selection(raw: Option<&str>) -> Result<BTreeSet<ClusterId>, ApiError> {
    raw.unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| ApiError::bad_request(format!("invalid cluster id `{s}`")))
        })
        .collect()
}

fn join_ids(ids: &BTreeSet<ClusterId>) -> String {
    ids.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let snap = state.snapshot();
    Json(json!({"status": "ok", "dataset_id": snap.workspace.dataset.dataset_id}))
}

async fn datasets(State(state): State<AppState>) -> Json<serde_json::Value> {
    let snap = state.snapshot();
    let ws = &snap.workspace;
    let report = &ws.dataset.report;
    Json(json!([{
        "dataset_id": ws.dataset.dataset_id,
        "fingerprint": snap.fingerprint,
        "regions": report.regions,
        "pois": report.pois,
        "trajectories": report.trajectories,
        "visits": report.visits,
        "categories": ws.dataset.taxonomy.names(),
        "levels": ws.config.aggregate.levels,
        "bin_width_minutes": ws.config.hon.bin_width_minutes,
    }]))
}

async fn regions(
    State(state): State<AppState>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let snap = state.snapshot();
    let level = parse_level(q.get("level").map(String::as_str))?;
    let window = parse_window(&snap.workspace, q.get("window").map(String::as_str))?;
    let day = parse_day_type(q.get("day_type").map(String::as_str))?;
    let key = format!("regions|{level}|{window}|{}", day_key(day));
    state
        .respond(snap, key, move |ws| {
            to_json(&views::regions(ws, level, &window, day)?)
        })
        .await
}

async fn region_stats(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let snap = state.snapshot();
    let id: ClusterId = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("invalid cluster id `{id}`")))?;
    let level = parse_level(q.get("level").map(String::as_str))?;
    let window = parse_window(&snap.workspace, q.get("window").map(String::as_str))?;
    let day = parse_day_type(q.get("day_type").map(String::as_str))?;
    let key = format!("stats|{id}|{level}|{window}|{}", day_key(day));
    state
        .respond(snap, key, move |ws| {
            to_json(&views::region_stats(ws, id, level, &window, day)?)
        })
        .await
}

async fn timeline(
    State(state): State<AppState>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let snap = state.snapshot();
    let selection = parse_selection(q.get("selection").map(String::as_str))?;
    let level = parse_level(q.get("level").map(String::as_str))?;
    let window = parse_window(&snap.workspace, q.get("window").map(String::as_str))?;
    let day = parse_day_type(q.get("day_type").map(String::as_str))?;
    let key = format!(
        "timeline|{}|{level}|{window}|{}",
        join_ids(&selection),
        day_key(day)
    );
    state
        .respond(snap, key, move |ws| {
            to_json(&views::timeline(ws, &selection, level, &window, day)?)
        })
        .await
}

async fn global_patterns(
    State(state): State<AppState>,
    Query(q): Query<Params>,
) -> Result<Response, ApiError> {
    let snap = state.snapshot();
    let level = parse_level(q.get("level").map(String::as_str))?;
    let window = parse_window(&snap.workspace, q.get("window").map(String::as_str))?;
    let day = parse_day_type(q.get("day_type").map(String::as_str))?;
    let top_n = match q.get("top_n") {
        None => snap.workspace.config.hon.top_n,
        Some(s) => s
            .parse()
            .map_err(|_| ApiError::bad_request(format!("invalid top_n `{s}`")))?,
    };
    let key = format!("global|{level}|{window}|{}|{top_n}", day_key(day));
    state
        .respond(snap, key, move |ws| {
            to_json(&views::global_patterns(ws, level, &window, day, top_n)?)
        })
        .await
}

async fn local_patterns(
    State(state): State<AppState>,
    Json(req): Json<views::LocalRequest>,
) -> Result<Response, ApiError> {
    let snap = state.snapshot();
    let selection: BTreeSet<ClusterId> = req.cluster_ids.iter().copied().collect();
    if selection.is_empty() {
        return Err(ApiError::bad_request("cluster_ids must not be empty"));
    }
    let level = req.level.unwrap_or(1);
    if level == 0 {
        return Err(ApiError::bad_request("invalid level `0`"));
    }
    let window = parse_window(&snap.workspace, req.window.as_deref())?;
    let day = parse_day_type(req.day_type.as_deref())?;
    let min_flow = req.min_flow.unwrap_or(0);
    let key = format!(
        "local|{}|{level}|{window}|{}|{min_flow}",
        join_ids(&selection),
        day_key(day)
    );
    state
        .respond(snap, key, move |ws| {
            to_json(&views::local(
                ws, &selection, level, &window, day, min_flow,
            )?)
        })
        .await
}
