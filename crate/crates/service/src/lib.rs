//! HTTP API over mapped symptom and skin bundles, with an append-only diagnosis log.

pub mod api;
mod app;
pub mod config;
mod log;

use std::path::PathBuf;
use std::sync::Arc;

pub use app::{router, validate_request, AppState, P6_FORMAT};
pub use config::{FsyncPolicy, ServiceConfig, CONFIG_ENV};
pub use log::{read_log, DiagnosisLog, DiagnosisLogEntry};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] mededge::Error),
}

impl ServiceError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.into(), source }
    }
}

/// Binds `cfg.bind` and serves until ctrl-c.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(&cfg)?);
    let app = router(state, cfg.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(cfg.bind).await.map_err(|e| ServiceError::io(cfg.bind.to_string(), e))?;
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::io(cfg.bind.to_string(), e))
}
