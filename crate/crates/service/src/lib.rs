//! HTTP service for the interactive what-if loop: stream windows with model
//! predictions, request counterfactual explanations under channel locks and
//! record accept/reject decisions in a per-session append-only event log.

mod app;
mod error;
pub mod events;
mod explain;
mod replay;
pub mod store;

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::PathBuf;

pub use app::{
    router, AppState, ChannelRef, CreateSession, DecisionAck, DecisionRequest, EventsResponse, ExplainRequest,
    ExplainResponse, WindowRange, WindowView, WindowsResponse,
};
pub use error::{Result, ServiceError};
pub use explain::run_explain;
pub use replay::{replay_session, ReplayReport};
pub use store::DataDir;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub bind: SocketAddr,
    /// Maximum number of fitted explainers (and loaded datasets) kept in memory.
    pub explainer_cache_size: NonZeroUsize,
    /// Log AnomalyDetected again each time a window is re-detected.
    pub repeat_anomaly_events: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            data_dir: PathBuf::from("pdm-data"),
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            explainer_cache_size: NonZeroUsize::new(4).expect("non-zero"),
            repeat_anomaly_events: false,
        }
    }
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    let app = router(AppState::new(config));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
