//! JSON-over-HTTP forecast endpoint.
//!
//! `GET /v1/health`, `GET /v1/forecast?category=standard&days=5&model=lstm`
//! and `POST /v1/reload`. Requests read an immutable snapshot of the artifact
//! directory; reload builds a new snapshot and swaps it in whole.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde_json::{json, Value};
use yardcast::artifact::{load_artifact, ModelArtifact};
use yardcast::{CalendarSpec, ContainerCategory, ModelFamily};

use crate::render::{forecast_document, MAX_DAYS};

pub type Key = (ContainerCategory, ModelFamily);

#[derive(Debug, Default)]
pub struct Snapshot {
    pub artifacts: BTreeMap<Key, Arc<ModelArtifact>>,
}

impl Snapshot {
    /// Loads every `*.json` artifact in `dir`. Unreadable files are skipped
    /// with a warning; for duplicate keys the newest artifact wins.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut artifacts: BTreeMap<Key, Arc<ModelArtifact>> = BTreeMap::new();
        let entries = std::fs::read_dir(dir).with_context(|| format!("reading artifact directory {}", dir.display()))?;
        let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
        paths.sort();
        for path in paths.into_iter().filter(|p| p.extension().is_some_and(|e| e == "json")) {
            match load_artifact(&path) {
                Ok(a) => {
                    let key = (a.fit.category, a.family);
                    if artifacts.get(&key).is_none_or(|old| old.created_at <= a.created_at) {
                        artifacts.insert(key, Arc::new(a));
                    }
                }
                Err(e) => warn!("skipping {}: {e}", path.display()),
            }
        }
        Ok(Self { artifacts })
    }
}

pub struct AppState {
    snapshot: RwLock<Arc<Snapshot>>,
    dir: PathBuf,
    calendar: CalendarSpec,
    default_model: ModelFamily,
}

impl AppState {
    pub fn new(dir: PathBuf, calendar: CalendarSpec, default_model: ModelFamily) -> Result<Self> {
        let snapshot = Snapshot::load(&dir)?;
        info!("serving {} artifact(s) from {}", snapshot.artifacts.len(), dir.display());
        Ok(Self { snapshot: RwLock::new(Arc::new(snapshot)), dir, calendar, default_model })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Rebuilds the snapshot; on failure the old one stays in place.
    pub fn reload(&self) -> Result<usize> {
        let fresh = Arc::new(Snapshot::load(&self.dir)?);
        let n = fresh.artifacts.len();
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = fresh;
        Ok(n)
    }
}

fn error(status: StatusCode, code: &str, reason: String) -> Response {
    (status, Json(json!({ "error": code, "reason": reason }))).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

/// Resolves query parameters to an artifact and horizon, or an error response.
fn resolve(state: &AppState, q: &HashMap<String, String>) -> Result<(Arc<ModelArtifact>, usize), Response> {
    if let Some(k) = q.keys().find(|k| !["category", "days", "model"].contains(&k.as_str())) {
        return Err(error(StatusCode::BAD_REQUEST, "bad_query", format!("unknown parameter {k:?}")));
    }
    let days = match q.get("days") {
        None => 5,
        Some(raw) => match raw.parse::<usize>() {
            Ok(d) if (1..=MAX_DAYS).contains(&d) => d,
            _ => {
                return Err(error(
                    StatusCode::BAD_REQUEST,
                    "bad_query",
                    format!("days must be an integer between 1 and {MAX_DAYS}, got {raw:?}"),
                ))
            }
        },
    };
    let category: ContainerCategory = match q.get("category").map_or(Ok(ContainerCategory::Standard), |c| c.parse()) {
        Ok(c) => c,
        Err(e) => return Err(error(StatusCode::NOT_FOUND, "unknown_category", e.to_string())),
    };
    let model: ModelFamily = match q.get("model").map_or(Ok(state.default_model), |m| m.parse()) {
        Ok(m) => m,
        Err(e) => return Err(error(StatusCode::NOT_FOUND, "unknown_model", e.to_string())),
    };
    match state.snapshot().artifacts.get(&(category, model)) {
        Some(a) => Ok((a.clone(), days)),
        None => Err(error(
            StatusCode::NOT_FOUND,
            "missing_artifact",
            format!("no {model} artifact for category {category}"),
        )),
    }
}

async fn forecast(State(state): State<Arc<AppState>>, Query(q): Query<HashMap<String, String>>) -> Response {
    let (artifact, days) = match resolve(&state, &q) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let cal = state.calendar.clone();
    match tokio::task::spawn_blocking(move || forecast_document(&artifact, days, &cal)).await {
        Ok(Ok(doc)) => Json(doc).into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "forecast_failed", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "forecast_failed", e.to_string()),
    }
}

async fn reload(State(state): State<Arc<AppState>>) -> Response {
    match state.reload() {
        Ok(n) => Json(json!({ "status": "reloaded", "artifacts": n })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "reload_failed", format!("{e:#}")),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/forecast", get(forecast))
        .route("/v1/reload", post(reload))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "not_found", "no such endpoint".into()) })
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, listener: tokio::net::TcpListener) -> Result<()> {
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
