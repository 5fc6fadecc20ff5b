//! Session-scoped HTTP API over the `geolatent` pipeline.
//!
//! Long operations (train, infer, track) run as polled jobs; tree mutations
//! are synchronous, serialized per session and persisted before they are
//! acknowledged.

pub mod api;
pub mod error;
pub mod jobs;
pub mod session;

use std::net::SocketAddr;
use std::path::PathBuf;

pub use api::{app, AppState};
pub use error::{ApiError, ApiResult, ErrorBody};
pub use jobs::{Job, JobKind, JobState, Jobs};
pub use session::Session;

pub const DEFAULT_HOST: &str = "127.0.0.1";
pub const DEFAULT_PORT: u16 = 8642;

/// Restores every session under `session_dir` and serves until the process exits.
pub async fn serve(addr: SocketAddr, session_dir: PathBuf) -> std::io::Result<()> {
    let state = AppState::open(session_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state)).await
}
