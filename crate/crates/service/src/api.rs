//! HTTP JSON API.
//!
//! A single writer thread owns the [`Session`]. Handlers send it commands over
//! a channel and await the reply; after every command the writer publishes an
//! immutable [`View`] that all GET handlers read from, so reads never wait on
//! a running verification.
//!
//! Claim ids contain `/` (for example `label/e1`), so clients percent-encode
//! them in paths: `/claims/label%2Fe1/evidence`.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};

use claimloop_core::arbitration::{ArbitrationItem, HumanAnswer};
use claimloop_core::constructor::BuildReport;
use claimloop_core::engine::{DecisionReport, LoopReport};
use claimloop_core::ids::{ClaimId, Version};
use claimloop_core::memory::SemanticMemory;
use claimloop_core::metrics::MetricReport;

use crate::config::ServiceConfig;
use crate::error::ServiceError;
use crate::session::{EvidenceView, IngestRequest, LockReport, Session};

type Reply<T> = oneshot::Sender<Result<T, ServiceError>>;

enum Command {
    Ingest(Box<IngestRequest>, Reply<BuildReport>),
    Verify(Reply<LoopReport>),
    Answer(ClaimId, HumanAnswer, Reply<DecisionReport>),
    Override(ClaimId, String, Reply<DecisionReport>),
    Lock(ClaimId, Reply<LockReport>),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyState {
    #[default]
    Idle,
    Running,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub rounds: usize,
    pub converged: bool,
    pub escalated: usize,
    pub version: Version,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VerifyStatus {
    pub state: VerifyState,
    /// Version the running pass started from.
    pub started_at: Option<Version>,
    pub completed_runs: u64,
    pub last: Option<VerifySummary>,
}

/// Read model published after each write.
pub struct Snapshot {
    pub memory: SemanticMemory,
    pub queue: Vec<ArbitrationItem>,
    pub evidence: BTreeMap<ClaimId, EvidenceView>,
    pub metrics: MetricReport,
}

#[derive(Default)]
pub struct View {
    pub snapshot: Option<Arc<Snapshot>>,
    pub verify: VerifyStatus,
}

fn snapshot_of(s: &Session) -> Arc<Snapshot> {
    let evidence = s
        .engine()
        .state()
        .claims
        .ids()
        .filter_map(|id| s.evidence(id).ok().map(|v| (id.clone(), v)))
        .collect();
    Arc::new(Snapshot {
        memory: s.memory().clone(),
        queue: s.queue(),
        evidence,
        metrics: s.metrics(),
    })
}

#[derive(Clone)]
pub struct AppState {
    commands: mpsc::Sender<Command>,
    view: watch::Receiver<Arc<View>>,
}

impl AppState {
    async fn send<T>(&self, make: impl FnOnce(Reply<T>) -> Command) -> Result<T, ServiceError> {
        let (tx, rx) = oneshot::channel();
        self.commands
            .send(make(tx))
            .await
            .map_err(|_| ServiceError::Internal("writer stopped".into()))?;
        rx.await
            .map_err(|_| ServiceError::Internal("writer dropped the request".into()))?
    }

    fn snapshot(&self) -> Result<Arc<Snapshot>, ServiceError> {
        self.view
            .borrow()
            .snapshot
            .clone()
            .ok_or_else(|| ServiceError::NotFound("no memory has been ingested".into()))
    }
}

/// Start the writer thread. `session` is the memory recovered at startup.
pub fn spawn_writer(config: ServiceConfig, session: Option<Session>) -> AppState {
    let (tx, mut rx) = mpsc::channel::<Command>(64);
    let initial = View {
        snapshot: session.as_ref().map(snapshot_of),
        verify: VerifyStatus::default(),
    };
    let (view_tx, view_rx) = watch::channel(Arc::new(initial));
    std::thread::Builder::new()
        .name("claimloop-writer".into())
        .spawn(move || {
            let mut session = session;
            let mut verify = VerifyStatus::default();
            let publish = |session: &Option<Session>, verify: &VerifyStatus| {
                view_tx.send_replace(Arc::new(View {
                    snapshot: session.as_ref().map(snapshot_of),
                    verify: verify.clone(),
                }));
            };
            let no_memory = || ServiceError::NoMemory(config.data_dir.clone());
            while let Some(cmd) = rx.blocking_recv() {
                match cmd {
                    Command::Ingest(req, reply) => {
                        let r = Session::ingest(&config, *req).map(|(s, report)| {
                            session = Some(s);
                            report
                        });
                        publish(&session, &verify);
                        let _ = reply.send(r);
                    }
                    Command::Verify(reply) => {
                        let Some(s) = session.as_mut() else {
                            let _ = reply.send(Err(no_memory()));
                            continue;
                        };
                        verify.state = VerifyState::Running;
                        verify.started_at = Some(s.memory().version());
                        view_tx.send_modify(|v| {
                            *v = Arc::new(View {
                                snapshot: v.snapshot.clone(),
                                verify: verify.clone(),
                            })
                        });
                        let r = s.verify();
                        if let Ok(report) = &r {
                            verify.completed_runs += 1;
                            verify.last = Some(VerifySummary {
                                rounds: report.rounds_run(),
                                converged: report.converged,
                                escalated: report.escalated.len(),
                                version: s.memory().version(),
                            });
                        }
                        verify.state = VerifyState::Idle;
                        verify.started_at = None;
                        publish(&session, &verify);
                        let _ = reply.send(r);
                    }
                    Command::Answer(id, answer, reply) => {
                        let r = match session.as_mut() {
                            Some(s) => s.answer(&id, answer),
                            None => Err(no_memory()),
                        };
                        publish(&session, &verify);
                        let _ = reply.send(r);
                    }
                    Command::Override(id, value, reply) => {
                        let r = match session.as_mut() {
                            Some(s) => s.override_claim(&id, value),
                            None => Err(no_memory()),
                        };
                        publish(&session, &verify);
                        let _ = reply.send(r);
                    }
                    Command::Lock(id, reply) => {
                        let r = match session.as_mut() {
                            Some(s) => s.lock(&id),
                            None => Err(no_memory()),
                        };
                        publish(&session, &verify);
                        let _ = reply.send(r);
                    }
                }
            }
        })
        .expect("spawn writer thread");
    AppState {
        commands: tx,
        view: view_rx,
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status =
            StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(self.body())).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Decode a JSON body, naming the offending field on failure.
fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        ServiceError::BadRequest {
            message: e.inner().to_string(),
            field,
        }
    })
}

fn query_u64(q: &HashMap<String, String>, key: &str) -> Result<Option<u64>, ServiceError> {
    q.get(key)
        .map(|v| {
            v.parse().map_err(|_| {
                ServiceError::bad_request(format!("{key} must be a nonnegative integer"), Some(key))
            })
        })
        .transpose()
}

async fn get_memory(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let run = || -> Result<Response, ServiceError> {
        let snap = st.snapshot()?;
        match query_u64(&q, "version")? {
            Some(v) if v != snap.memory.version() => {
                Ok(Json(snap.memory.state_at(v)?).into_response())
            }
            _ => Ok(Json(snap.memory.state()).into_response()),
        }
    };
    run().unwrap_or_else(IntoResponse::into_response)
}

async fn get_claims(State(st): State<AppState>) -> Response {
    match st.snapshot() {
        Ok(s) => Json(&s.memory.state().claims).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn get_evidence(
    State(st): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<EvidenceView> {
    let snap = st.snapshot()?;
    snap.evidence
        .get(&ClaimId::from(id.as_str()))
        .cloned()
        .map(Json)
        .ok_or_else(|| ServiceError::NotFound(format!("unknown claim {id}")))
}

async fn get_queue(State(st): State<AppState>) -> ApiResult<Vec<ArbitrationItem>> {
    Ok(Json(st.snapshot()?.queue.clone()))
}

async fn get_metrics(State(st): State<AppState>) -> ApiResult<MetricReport> {
    Ok(Json(st.snapshot()?.metrics.clone()))
}

async fn get_provenance(
    State(st): State<AppState>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let run = || -> Result<Response, ServiceError> {
        let snap = st.snapshot()?;
        let from = query_u64(&q, "from_seq")?.unwrap_or(0);
        let entries: Vec<_> = snap.memory.log().iter().filter(|e| e.seq >= from).collect();
        Ok(Json(entries).into_response())
    };
    run().unwrap_or_else(IntoResponse::into_response)
}

async fn get_verify_status(State(st): State<AppState>) -> Json<VerifyStatus> {
    Json(st.view.borrow().verify.clone())
}

async fn post_ingest(State(st): State<AppState>, body: Bytes) -> ApiResult<BuildReport> {
    let req: IngestRequest = parse_body(&body)?;
    Ok(Json(st.send(|r| Command::Ingest(Box::new(req), r)).await?))
}

async fn post_verify(State(st): State<AppState>) -> ApiResult<LoopReport> {
    Ok(Json(st.send(Command::Verify).await?))
}

async fn post_answer(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<DecisionReport> {
    let answer: HumanAnswer = parse_body(&body)?;
    let id = ClaimId::from(id.as_str());
    Ok(Json(st.send(|r| Command::Answer(id, answer, r)).await?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OverrideBody {
    value: String,
}

async fn post_override(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<DecisionReport> {
    let OverrideBody { value } = parse_body(&body)?;
    let id = ClaimId::from(id.as_str());
    Ok(Json(st.send(|r| Command::Override(id, value, r)).await?))
}

async fn post_lock(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<LockReport> {
    let id = ClaimId::from(id.as_str());
    Ok(Json(st.send(|r| Command::Lock(id, r)).await?))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ingest", post(post_ingest))
        .route("/memory", get(get_memory))
        .route("/claims", get(get_claims))
        .route("/claims/{id}/evidence", get(get_evidence))
        .route("/claims/{id}/override", post(post_override))
        .route("/claims/{id}/lock", post(post_lock))
        .route("/queue", get(get_queue))
        .route("/queue/{id}/answer", post(post_answer))
        .route("/verify", post(post_verify))
        .route("/verify/status", get(get_verify_status))
        .route("/provenance", get(get_provenance))
        .route("/metrics", get(get_metrics))
        .with_state(state)
}

/// Recover the memory, bind and serve until interrupted.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    config.validate()?;
    crate::store::DataDir::new(&config.data_dir).ensure_writable()?;
    let session = Session::open_existing(&config)?;
    if let Some(s) = &session {
        log::info!(
            "recovered memory at version {} from {} log entries",
            s.memory().version(),
            s.memory().log().len()
        );
    }
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| ServiceError::Internal(format!("binding {}: {e}", config.listen)))?;
    log::info!("listening on {}", config.listen);
    let app = router(spawn_writer(config, session));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
