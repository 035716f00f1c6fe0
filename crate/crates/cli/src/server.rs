//! HTTP front ends for the claim database and for a monitor.

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use cyberlog::claimdb::{ClaimDb, ClaimStore, StoreError};
use cyberlog::monitor::{Answer, EventEnvelope, Monitor};
use cyberlog::revision::{RevisionRecord, RulesheetEntry};
use cyberlog::Digest;

pub struct ApiError(StoreError);

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self.0)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn digest(hex: &str) -> Result<Digest, ApiError> {
    hex.parse()
        .map_err(|_| ApiError(StoreError::BadRequest(format!("'{hex}' is not a 64-digit hex digest"))))
}

#[derive(Debug, Deserialize)]
pub struct SizePair {
    pub old: u64,
    pub new: u64,
}

#[derive(Debug, Deserialize)]
pub struct IndexSize {
    pub index: u64,
    pub size: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LeafIndex {
    pub leaf_index: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Clock {
    pub ms: i64,
}

async fn health() -> &'static str {
    "ok"
}

/// Runs blocking store work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StoreError::Unavailable(e.to_string())))?
        .map(Json)
        .map_err(ApiError)
}

/// Claim database routes. `virtual_clock` enables `POST /clock`.
pub fn db_router(db: Arc<ClaimDb>, virtual_clock: bool) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route(
            "/revisions",
            post(|State(db): State<Arc<ClaimDb>>, Json(rec): Json<RevisionRecord>| async move {
                blocking(move || db.submit_revision(&rec)).await
            }),
        )
        .route(
            "/revisions/{id}",
            get(|State(db): State<Arc<ClaimDb>>, Path(id): Path<String>| async move {
                let id = digest(&id)?;
                blocking(move || db.get_revision(&id)).await
            }),
        )
        .route(
            "/heads/{owner}",
            get(|State(db): State<Arc<ClaimDb>>, Path(owner): Path<String>| async move {
                blocking(move || db.get_head(&owner)).await
            }),
        )
        .route(
            "/log/root",
            get(|State(db): State<Arc<ClaimDb>>| async move { blocking(move || db.log_root()).await }),
        )
        .route(
            "/log/consistency",
            get(|State(db): State<Arc<ClaimDb>>, Query(q): Query<SizePair>| async move {
                blocking(move || db.consistency(q.old, q.new)).await
            }),
        )
        .route(
            "/log/inclusion",
            get(|State(db): State<Arc<ClaimDb>>, Query(q): Query<IndexSize>| async move {
                blocking(move || db.inclusion(q.index, q.size)).await
            }),
        )
        .route(
            "/log/entries/{index}",
            get(|State(db): State<Arc<ClaimDb>>, Path(index): Path<u64>| async move {
                let Json(bytes) = blocking(move || db.entry(index)).await?;
                Ok::<_, ApiError>(([(header::CONTENT_TYPE, "application/octet-stream")], Bytes::from(bytes)))
            }),
        )
        .route(
            "/rulesheets",
            post(|State(db): State<Arc<ClaimDb>>, Json(e): Json<RulesheetEntry>| async move {
                blocking(move || db.submit_rulesheet(&e).map(|leaf_index| LeafIndex { leaf_index })).await
            }),
        )
        .route(
            "/rulesheets/{owner}/{hash}",
            get(|State(db): State<Arc<ClaimDb>>, Path((owner, hash)): Path<(String, String)>| async move {
                let hash = digest(&hash)?;
                blocking(move || db.get_rulesheet(&owner, &hash)).await
            }),
        );
    if virtual_clock {
        r = r.route(
            "/clock",
            post(|State(db): State<Arc<ClaimDb>>, Json(c): Json<Clock>| async move {
                db.set_time(c.ms);
                Json(c)
            }),
        );
    }
    r.with_state(db)
}

pub type SharedMonitor = Arc<Mutex<Monitor>>;

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryRequest {
    pub pattern: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    pub answers: Vec<Answer>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommitRequest {
    pub now: i64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CommitResponse {
    pub revision_id: Digest,
    pub claims: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PollResult {
    pub owner: String,
    pub ok: bool,
    pub detail: String,
}

fn rejected(e: impl ToString) -> ApiError {
    ApiError(StoreError::BadRequest(e.to_string()))
}

async fn with_monitor<T: Send + 'static>(
    m: SharedMonitor,
    f: impl FnOnce(&mut Monitor) -> Result<T, ApiError> + Send + 'static,
) -> Result<Json<T>, ApiError> {
    tokio::task::spawn_blocking(move || {
        let mut guard = m.lock().map_err(|_| ApiError(StoreError::Unavailable("monitor poisoned".into())))?;
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError(StoreError::Unavailable(e.to_string())))?
    .map(Json)
}

/// Monitor routes: the proxy callout, queries, metrics, and manual
/// commit/poll triggers.
pub fn monitor_router(m: SharedMonitor) -> Router {
    Router::new()
        .route("/health", get(health))
        .route(
            "/event",
            post(|State(m): State<SharedMonitor>, Json(ev): Json<EventEnvelope>| async move {
                with_monitor(m, move |m| m.ingest_event(&ev).map_err(rejected)).await
            }),
        )
        .route(
            "/query",
            post(|State(m): State<SharedMonitor>, Json(q): Json<QueryRequest>| async move {
                with_monitor(m, move |m| {
                    m.handle_query(&q.pattern)
                        .map(|answers| QueryResponse { answers })
                        .map_err(rejected)
                })
                .await
            }),
        )
        .route(
            "/metrics",
            get(|State(m): State<SharedMonitor>| async move { with_monitor(m, |m| Ok(m.metrics())).await }),
        )
        .route(
            "/commit",
            post(|State(m): State<SharedMonitor>, Json(c): Json<CommitRequest>| async move {
                with_monitor(m, move |m| {
                    m.commit(c.now)
                        .map(|r| CommitResponse {
                            revision_id: r.id,
                            claims: r.body.claims.len(),
                        })
                        .map_err(|e| ApiError(StoreError::Unavailable(e.to_string())))
                })
                .await
            }),
        )
        .route(
            "/poll",
            post(|State(m): State<SharedMonitor>| async move {
                with_monitor(m, |m| {
                    Ok(m.poll_and_include()
                        .into_iter()
                        .map(|(owner, r)| PollResult {
                            owner,
                            ok: r.is_ok(),
                            detail: match r {
                                Ok(o) => format!("{o:?}"),
                                Err(e) => e,
                            },
                        })
                        .collect::<Vec<_>>())
                })
                .await
            }),
        )
        .with_state(m)
}

/// A server running on its own runtime thread.
pub struct Background {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl Background {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for Background {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves `router` on a background thread until dropped.
pub fn spawn(router: Router, addr: &str) -> std::io::Result<Background> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let (tx, rx) = tokio::sync::oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("tokio runtime");
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).expect("listener");
            let _ = axum::serve(listener, router)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await;
        });
    });
    Ok(Background {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}

/// Serves `router` on `addr` until Ctrl-C.
pub fn serve_forever(router: Router, addr: &str) -> std::io::Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
    })
}
