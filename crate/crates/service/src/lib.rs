//! Flag store and HTTP API.

pub mod api;
pub mod publish;
pub mod store;

use std::net::SocketAddr;
use std::sync::Arc;

pub use api::router;
pub use store::{FlagFilter, FlagRecord, FlagStatus, RunRecord, RunRequest, RunStatus, Store, StoreError};

/// Binds `addr` and serves the API until `shutdown` resolves.
pub async fn serve(
    store: Arc<Store>,
    addr: SocketAddr,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving on http://{}", listener.local_addr()?);
    serve_listener(store, listener, shutdown).await
}

pub async fn serve_listener(
    store: Arc<Store>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await
}
