//! HTTP watchdog: a read-only store behind three routes.

use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use halmit_core::gateway::{build_backend, build_embedder, Role};
use halmit_core::monitor::{Monitor, MonitorConfig, MonitorError};
use halmit_core::{ChatBackend, Config, Embedder, EquivalenceOracle, VectorStore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

pub struct AppState {
    store: Option<VectorStore>,
    /// Why `store` is absent.
    missing: String,
    target: Arc<dyn ChatBackend>,
    oracle: EquivalenceOracle,
    embedder: Box<dyn Embedder>,
    monitor: MonitorConfig,
    permits: Semaphore,
}

impl AppState {
    pub fn from_config(config: &Config) -> Result<Self> {
        let path = &config.paths.store;
        let (store, missing) = if path.exists() {
            (Some(VectorStore::load(path)?), String::new())
        } else {
            tracing::warn!("store {} not found; /v1/check answers 503", path.display());
            (None, format!("boundary store {} not found; run `halmit explore` first", path.display()))
        };
        Ok(Self {
            store,
            missing,
            target: build_backend(&config.gateway.target, Role::Target)?,
            oracle: EquivalenceOracle::from_spec(&config.entropy)?,
            embedder: build_embedder(&config.gateway.embedding)?,
            monitor: config.monitor.clone(),
            permits: Semaphore::new(config.monitor.max_in_flight),
        })
    }
}

#[derive(Debug, Deserialize)]
pub struct CheckRequest {
    #[serde(default)]
    pub domain: Option<String>,
    pub query: String,
}

#[derive(Debug, Deserialize)]
pub struct BoundaryParams {
    pub domain: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct BoundarySummary {
    pub count: usize,
    pub mean_entropy: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    pub store_records: usize,
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

async fn check(State(state): State<Arc<AppState>>, Json(req): Json<CheckRequest>) -> Response {
    if state.store.is_none() {
        return error(StatusCode::SERVICE_UNAVAILABLE, &state.missing);
    }
    let _permit = match state.permits.acquire().await {
        Ok(p) => p,
        Err(e) => return error(StatusCode::SERVICE_UNAVAILABLE, e),
    };
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let monitor = Monitor {
            store: worker.store.as_ref().expect("checked above"),
            target: worker.target.as_ref(),
            oracle: &worker.oracle,
            embedder: worker.embedder.as_ref(),
            config: &worker.monitor,
        };
        monitor.check(&req.query, req.domain.as_deref())
    })
    .await;
    match result {
        Ok(Ok(verdict)) => ([(header::CONTENT_TYPE, "application/json")], verdict.to_json_line()).into_response(),
        Ok(Err(e @ MonitorError::Gateway(_))) => error(StatusCode::BAD_GATEWAY, e),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e),
    }
}

async fn boundary(State(state): State<Arc<AppState>>, Query(params): Query<BoundaryParams>) -> Response {
    let Some(store) = &state.store else {
        return error(StatusCode::SERVICE_UNAVAILABLE, &state.missing);
    };
    let entropies: Vec<f64> = store
        .records()
        .iter()
        .filter(|r| params.domain.as_deref().is_none_or(|d| r.domain == d))
        .map(|r| r.semantic_entropy)
        .collect();
    let mean_entropy = (!entropies.is_empty()).then(|| entropies.iter().sum::<f64>() / entropies.len() as f64);
    Json(BoundarySummary { count: entropies.len(), mean_entropy }).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(match &state.store {
        Some(store) => Health { status: "ok", store_records: store.len() },
        None => Health { status: "no_store", store_records: 0 },
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/check", post(check))
        .route("/v1/boundary", get(boundary))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Binds `addr`, prints the bound address on stdout and serves until Ctrl-C.
pub fn serve(config: &Config, addr: &str) -> Result<ExitCode> {
    let state = Arc::new(AppState::from_config(config)?);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("listening on {}", listener.local_addr()?);
        use std::io::Write;
        std::io::stdout().flush()?;
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(ExitCode::SUCCESS)
    })
}
