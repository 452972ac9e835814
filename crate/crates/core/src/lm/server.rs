//! Server side of the remote LM wire protocol, used to expose the reference
//! n-gram model to out-of-process clients.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::json;
use tokio::sync::oneshot;

use super::remote::{
    DetokenizeRequest, DetokenizeResponse, LogitsRequest, LogitsResponse, TokenLogprob,
    TokenizeRequest, TokenizeResponse,
};
use super::{LanguageModel, LmError, TokenId};

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<LmError> for ApiError {
    fn from(e: LmError) -> Self {
        ApiError(StatusCode::BAD_REQUEST, e.to_string())
    }
}

type Shared<L> = Arc<L>;

pub fn router<L>(lm: Arc<L>) -> Router
where
    L: LanguageModel + Send + Sync + 'static,
{
    Router::new()
        .route("/v1/tokenize", post(tokenize::<L>))
        .route("/v1/detokenize", post(detokenize::<L>))
        .route("/v1/logits", post(logits::<L>))
        .with_state(lm)
}

async fn tokenize<L: LanguageModel + Send + Sync + 'static>(
    State(lm): State<Shared<L>>,
    Json(req): Json<TokenizeRequest>,
) -> Result<Json<TokenizeResponse>, ApiError> {
    let ids = lm.tokenize(&req.text)?.into_iter().map(|t| t.0).collect();
    Ok(Json(TokenizeResponse { ids }))
}

async fn detokenize<L: LanguageModel + Send + Sync + 'static>(
    State(lm): State<Shared<L>>,
    Json(req): Json<DetokenizeRequest>,
) -> Result<Json<DetokenizeResponse>, ApiError> {
    let ids: Vec<TokenId> = req.ids.into_iter().map(TokenId).collect();
    Ok(Json(DetokenizeResponse {
        text: lm.detokenize(&ids)?,
    }))
}

async fn logits<L: LanguageModel + Send + Sync + 'static>(
    State(lm): State<Shared<L>>,
    Json(req): Json<LogitsRequest>,
) -> Result<Json<LogitsResponse>, ApiError> {
    if req.top_k == 0 {
        return Err(ApiError(StatusCode::BAD_REQUEST, "top_k must be at least 1".into()));
    }
    let prefix: Vec<TokenId> = req.prefix.into_iter().map(TokenId).collect();
    let step = lm.next_logits(&prefix)?.top_k(req.top_k);
    Ok(Json(LogitsResponse {
        tokens: step
            .iter()
            .map(|(id, logprob)| TokenLogprob { id: id.0, logprob })
            .collect(),
        eos_id: Some(lm.eos().0),
        vocab_size: Some(lm.vocab_size()),
    }))
}

/// Serves until `shutdown` resolves.
pub async fn serve<L, F>(listener: tokio::net::TcpListener, lm: Arc<L>, shutdown: F) -> std::io::Result<()>
where
    L: LanguageModel + Send + Sync + 'static,
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(lm))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits (it only does so after [`ServerHandle::shutdown`]).
    pub fn join(mut self) -> std::io::Result<()> {
        match self.thread.take() {
            Some(t) => t.join().unwrap_or_else(|_| Err(std::io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        self.join()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and serves `lm` on a background thread.
pub fn spawn<L>(lm: Arc<L>, addr: SocketAddr) -> std::io::Result<ServerHandle>
where
    L: LanguageModel + Send + Sync + 'static,
{
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("lm-server".into())
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_io()
                .build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                serve(listener, lm, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        thread: Some(thread),
    })
}
