//! HTTP JSON API over the detector: detection jobs plus the analytics that
//! back the monitoring views (spatial and temporal overviews, node ranking,
//! per-node performance, cluster scatter).
//!
//! All routes live under `/api`. Errors are returned as
//! `{"code": ..., "message": ...}` with a matching HTTP status.

mod error;
mod jobs;
mod views;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::routing::{get, post};
use axum::Router;
use clouddet_core::ingest::Store;
use tower_http::cors::{Any, CorsLayer};

pub use error::ApiError;
pub use jobs::{DetectParams, DetectionJob, JobResult, JobStatus, Jobs};

/// Shared server state.
#[derive(Debug)]
pub struct AppState {
    pub store: Arc<Store>,
    pub jobs: Jobs,
}

impl AppState {
    pub fn new(store: Arc<Store>) -> Arc<Self> {
        Arc::new(AppState {
            store,
            jobs: Jobs::default(),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods(Any).allow_headers(Any);
    Router::new()
        .route("/api/datasets", get(views::datasets))
        .route("/api/detect", post(jobs::detect))
        .route("/api/jobs/{id}", get(jobs::job_status))
        .route("/api/overview/spatial", get(views::spatial))
        .route("/api/overview/temporal", get(views::temporal))
        .route("/api/nodes/rank", get(views::rank))
        .route("/api/nodes/{id}/performance", get(views::performance))
        .route("/api/cluster", get(views::cluster))
        .fallback(|| async { ApiError::not_found("no such route") })
        .layer(cors)
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
