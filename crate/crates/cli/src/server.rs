//! HTTP quote service: `POST /quote`, `GET /healthz`, and hot reload of the
//! artifact file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use arc_swap::ArcSwap;
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use leadprice::artifact::{content_version, ModelArtifact};
use leadprice::engine::{QuoteEngine, QuoteRequest};
use serde::Serialize;

pub struct ServerState {
    engine: ArcSwap<QuoteEngine>,
    path: PathBuf,
}

impl ServerState {
    pub fn load(path: &Path) -> anyhow::Result<Arc<Self>> {
        let engine = QuoteEngine::load(path)?;
        Ok(Arc::new(Self {
            engine: ArcSwap::from_pointee(engine),
            path: path.to_path_buf(),
        }))
    }

    pub fn version(&self) -> String {
        self.engine.load().version().to_string()
    }

    /// Swaps in the artifact on disk if its content changed. Returns whether
    /// a new model was installed; a bad file leaves the current model serving.
    pub fn reload(&self) -> bool {
        let bytes = match std::fs::read(&self.path) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("cannot read {}: {e}", self.path.display());
                return false;
            }
        };
        let version = content_version(&bytes);
        if version == self.engine.load().version() {
            return false;
        }
        let parsed = std::str::from_utf8(&bytes)
            .map_err(|e| leadprice::Error::InvalidInput(e.to_string()))
            .and_then(ModelArtifact::from_json)
            .and_then(|a| QuoteEngine::new(a, version.clone()));
        match parsed {
            Ok(engine) => {
                self.engine.store(Arc::new(engine));
                log::info!("serving model {version}");
                true
            }
            Err(e) => {
                log::warn!("ignoring artifact {version}: {e}");
                false
            }
        }
    }
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: msg.into() })).into_response()
}

async fn quote(State(state): State<Arc<ServerState>>, body: Bytes) -> Response {
    let request: QuoteRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let engine = state.engine.load_full();
    let result = tokio::task::spawn_blocking(move || engine.quote(&request)).await;
    match result {
        Ok(Ok(response)) => Json(response).into_response(),
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => error(
            StatusCode::INTERNAL_SERVER_ERROR,
            format!("quote task failed: {e}"),
        ),
    }
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_version: String,
}

async fn healthz(State(state): State<Arc<ServerState>>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model_version: state.version(),
    })
}

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new()
        .route("/quote", post(quote))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Polls the artifact file every `poll` and swaps in new content.
pub fn spawn_reloader(state: Arc<ServerState>, poll: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(poll);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tick.tick().await;
            let s = state.clone();
            let _ = tokio::task::spawn_blocking(move || s.reload()).await;
        }
    })
}

/// Binds `addr` and serves until the process is interrupted.
pub async fn serve(artifact: &Path, addr: SocketAddr, poll: Duration) -> anyhow::Result<()> {
    let state = ServerState::load(artifact)?;
    log::info!("serving model {} on {addr}", state.version());
    let reloader = spawn_reloader(state.clone(), poll);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    reloader.abort();
    Ok(())
}
