//! HTTP service over one scene session: scene metadata, the point stream,
//! instances, edits with undo, and asynchronous render previews.
//!
//! Every response carries the current scene revision in the
//! `x-scene-revision` header. Edits and undos bump the revision by one
//! under an exclusive lock; renders read a snapshot taken at submission.

pub mod routes;
pub mod state;
pub mod stream;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::{HeaderName, HeaderValue, Method};
use axum::Router;
use pointlift_core::bundle::write_json;
use pointlift_core::edit::EditFile;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use routes::{router, REVISION_HEADER};
pub use state::{AppState, Session};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub bind: SocketAddr,
    /// Allowed browser origin; any origin when `None`.
    pub cors_origin: Option<String>,
    /// Where the edit log is written on shutdown.
    pub edits_path: Option<PathBuf>,
}

pub fn app(state: Arc<AppState>, cors_origin: Option<&str>) -> Result<Router, String> {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).map_err(|e| format!("bad CORS origin {o:?}: {e}"))?),
        None => AllowOrigin::from(Any),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::DELETE])
        .allow_headers(Any)
        .expose_headers([HeaderName::from_static(REVISION_HEADER)]);
    Ok(router(state).layer(cors))
}

/// Serves until `shutdown` resolves, then writes the edit log.
pub async fn serve(
    state: Arc<AppState>,
    opts: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = app(state.clone(), opts.cors_origin.as_deref()).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(opts.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await?;
    if let Some(path) = &opts.edits_path {
        let ops = state.session.read().unwrap().log.ops.clone();
        write_json(path, &EditFile { ops }).map_err(std::io::Error::other)?;
        tracing::info!(path = %path.display(), "wrote edit log");
    }
    Ok(())
}
