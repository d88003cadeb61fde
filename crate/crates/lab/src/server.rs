//! HTTP front end. Each session lives in its own task that applies commands
//! one at a time in arrival order; handlers talk to it through a channel.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{broadcast, mpsc, oneshot, RwLock};

use crate::config::SessionConfig;
use crate::export::{export, ExportBundle};
use crate::session::{AdminState, AnalyticsFrame, LabError, PublicState, RoundFrame, RoundResult, Session, SCHEMA_VERSION};

pub const ENV_BIND: &str = "BUBBLESCOPE_LAB_BIND";
pub const ENV_ADMIN_TOKEN: &str = "BUBBLESCOPE_LAB_ADMIN_TOKEN";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

const CHANNEL_CAPACITY: usize = 1024;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

type Reply<T> = oneshot::Sender<Result<T, LabError>>;

enum Cmd {
    Join { name: String, reply: Reply<(usize, String)> },
    Start { token: Option<String>, reply: Reply<PublicState> },
    Submit { subject: usize, token: String, round: usize, action: i64, reply: Reply<bool> },
    Settle { round: usize, auth: SettleAuth, reply: Option<Reply<RoundResult>> },
    Feedback { token: Option<String>, override_bit: Option<u8>, reply: Reply<()> },
    Public { reply: Reply<PublicState> },
    Admin { token: Option<String>, reply: Reply<AdminState> },
    Result { token: Option<String>, round: usize, reply: Reply<RoundResult> },
    Subject { subject: usize, token: String, reply: Reply<SubjectView> },
    Export { token: Option<String>, reply: Reply<ExportBundle> },
    WatchRounds { reply: Reply<(Vec<RoundFrame>, broadcast::Receiver<(usize, RoundFrame)>)> },
    WatchAnalytics { token: Option<String>, reply: Reply<(Vec<AnalyticsFrame>, broadcast::Receiver<(usize, AnalyticsFrame)>)> },
}

enum SettleAuth {
    Admin(Option<String>),
    /// Deadline timer: only settles once the deadline has passed.
    Timer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubjectView {
    pub v: u32,
    pub subject: usize,
    pub score: f64,
    pub payout: Option<f64>,
}

#[derive(Clone)]
struct Handle {
    tx: mpsc::Sender<Cmd>,
}

struct Actor {
    session: Session,
    rx: mpsc::Receiver<Cmd>,
    tx: mpsc::WeakSender<Cmd>,
    rounds: broadcast::Sender<(usize, RoundFrame)>,
    analytics: broadcast::Sender<(usize, AnalyticsFrame)>,
    sent_rounds: usize,
    sent_analytics: usize,
    timer_for: Option<usize>,
}

impl Actor {
    async fn run(mut self) {
        while let Some(cmd) = self.rx.recv().await {
            self.apply(cmd);
            self.publish();
            self.arm_timer();
        }
    }

    fn apply(&mut self, cmd: Cmd) {
        let s = &mut self.session;
        let now = now_ms();
        match cmd {
            Cmd::Join { name, reply } => {
                let token = uuid::Uuid::new_v4().simple().to_string();
                let _ = reply.send(s.join(name, token.clone(), now).map(|i| (i, token)));
            }
            Cmd::Start { token, reply } => {
                let r = s.check_admin(token.as_deref()).and_then(|()| s.start(now)).map(|()| s.public_state());
                let _ = reply.send(r);
            }
            Cmd::Submit { subject, token, round, action, reply } => {
                let r = s.check_subject(subject, &token).and_then(|()| s.submit(subject, round, action, now));
                if let Ok(true) = r {
                    let _ = s.settle(round, now, false);
                }
                let _ = reply.send(r);
            }
            Cmd::Settle { round, auth, reply } => {
                let r = match auth {
                    SettleAuth::Admin(token) => s.check_admin(token.as_deref()).and_then(|()| s.settle(round, now, true)),
                    SettleAuth::Timer => s.settle(round, now, false),
                };
                if let Some(reply) = reply {
                    let _ = reply.send(r);
                }
            }
            Cmd::Feedback { token, override_bit, reply } => {
                let _ = reply.send(s.check_admin(token.as_deref()).and_then(|()| s.set_false_feedback(override_bit, now)));
            }
            Cmd::Public { reply } => {
                let _ = reply.send(Ok(s.public_state()));
            }
            Cmd::Admin { token, reply } => {
                let _ = reply.send(s.check_admin(token.as_deref()).map(|()| s.admin_state()));
            }
            Cmd::Result { token, round, reply } => {
                let r = s
                    .check_admin(token.as_deref())
                    .and_then(|()| s.result(round).cloned().ok_or(LabError::NotOpen { round, open: s.true_moves().len() }));
                let _ = reply.send(r);
            }
            Cmd::Subject { subject, token, reply } => {
                let r = s.check_subject(subject, &token).and_then(|()| {
                    Ok(SubjectView {
                        v: SCHEMA_VERSION,
                        subject,
                        score: s.score(subject)?,
                        payout: s.final_payout(subject).ok(),
                    })
                });
                let _ = reply.send(r);
            }
            Cmd::Export { token, reply } => {
                let _ = reply.send(s.check_admin(token.as_deref()).map(|()| export(s)));
            }
            Cmd::WatchRounds { reply } => {
                let backlog = s.round_frames()[..self.sent_rounds].to_vec();
                let _ = reply.send(Ok((backlog, self.rounds.subscribe())));
            }
            Cmd::WatchAnalytics { token, reply } => {
                let r = s.check_admin(token.as_deref()).map(|()| {
                    let backlog = s.frames()[..self.sent_analytics].to_vec();
                    (backlog, self.analytics.subscribe())
                });
                let _ = reply.send(r);
            }
        }
    }

    fn publish(&mut self) {
        for (i, f) in self.session.round_frames().iter().enumerate().skip(self.sent_rounds) {
            let _ = self.rounds.send((i, f.clone()));
        }
        self.sent_rounds = self.session.round_frames().len();
        for (i, f) in self.session.frames().iter().enumerate().skip(self.sent_analytics) {
            let _ = self.analytics.send((i, f.clone()));
        }
        self.sent_analytics = self.session.frames().len();
    }

    fn arm_timer(&mut self) {
        let Some((round, deadline)) = self.session.open_round() else {
            return;
        };
        if self.timer_for == Some(round) {
            return;
        }
        self.timer_for = Some(round);
        let tx = self.tx.clone();
        tokio::spawn(async move {
            let wait = deadline.saturating_sub(now_ms());
            tokio::time::sleep(Duration::from_millis(wait)).await;
            if let Some(tx) = tx.upgrade() {
                let _ = tx
                    .send(Cmd::Settle {
                        round,
                        auth: SettleAuth::Timer,
                        reply: None,
                    })
                    .await;
            }
        });
    }
}

pub struct AppState {
    sessions: RwLock<HashMap<String, Handle>>,
    admin_token: Option<String>,
}

impl AppState {
    pub fn new(admin_token: Option<String>) -> Arc<Self> {
        Arc::new(Self {
            sessions: RwLock::new(HashMap::new()),
            admin_token,
        })
    }

    pub fn from_env() -> Arc<Self> {
        Self::new(std::env::var(ENV_ADMIN_TOKEN).ok().filter(|t| !t.is_empty()))
    }

    async fn handle(&self, id: &str) -> Result<Handle, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| LabError::SessionNotFound(id.to_string()).into())
    }
}

#[derive(Debug)]
pub struct ApiError(LabError);

impl From<LabError> for ApiError {
    fn from(e: LabError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            LabError::InvalidConfig(_) | LabError::BadAction(_) | LabError::BadBit(_) => StatusCode::UNPROCESSABLE_ENTITY,
            LabError::SessionNotFound(_) | LabError::UnknownSubject(_) => StatusCode::NOT_FOUND,
            LabError::Unauthorized => StatusCode::UNAUTHORIZED,
            LabError::Late { .. } => StatusCode::GONE,
            LabError::Duplicate { .. } | LabError::Full(_) => StatusCode::CONFLICT,
            LabError::NotOpen { .. }
            | LabError::WrongPhase { .. }
            | LabError::NotEnoughSubjects { .. }
            | LabError::DeadlineNotReached { .. } => StatusCode::PRECONDITION_FAILED,
            LabError::ReplayMismatch(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({
            "v": SCHEMA_VERSION,
            "error": { "code": self.0.code(), "message": self.0.to_string() },
        });
        if let LabError::InvalidConfig(fields) = &self.0 {
            body["error"]["fields"] = json!(fields);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn call<T>(h: &Handle, make: impl FnOnce(Reply<T>) -> Cmd) -> Result<T, ApiError> {
    let (tx, rx) = oneshot::channel();
    let gone = || ApiError(LabError::SessionNotFound("session task stopped".into()));
    h.tx.send(make(tx)).await.map_err(|_| gone())?;
    rx.await.map_err(|_| gone())?.map_err(ApiError)
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

#[derive(Debug, Default, Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

fn admin_token(headers: &HeaderMap, q: &TokenQuery) -> Option<String> {
    bearer(headers).or_else(|| q.token.clone())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub v: u32,
    pub session_id: String,
    pub admin_token: String,
    pub seed: u64,
}

async fn create(State(app): State<Arc<AppState>>, headers: HeaderMap, Json(mut cfg): Json<SessionConfig>) -> Result<(StatusCode, Json<Created>), ApiError> {
    if let Some(want) = &app.admin_token {
        if bearer(&headers).as_deref() != Some(want.as_str()) {
            return Err(LabError::Unauthorized.into());
        }
    }
    cfg.validate().map_err(LabError::InvalidConfig)?;
    let seed = *cfg.seed.get_or_insert_with(rand::random);
    let admin = cfg
        .admin_token
        .get_or_insert_with(|| uuid::Uuid::new_v4().simple().to_string())
        .clone();
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session::create(id.clone(), cfg, now_ms())?;
    let (tx, rx) = mpsc::channel(256);
    let actor = Actor {
        session,
        rx,
        tx: tx.downgrade(),
        rounds: broadcast::channel(CHANNEL_CAPACITY).0,
        analytics: broadcast::channel(CHANNEL_CAPACITY).0,
        sent_rounds: 0,
        sent_analytics: 0,
        timer_for: None,
    };
    tokio::spawn(async move {
        let mut actor = actor;
        actor.publish();
        actor.run().await
    });
    app.sessions.write().await.insert(id.clone(), Handle { tx });
    Ok((
        StatusCode::CREATED,
        Json(Created {
            v: SCHEMA_VERSION,
            session_id: id,
            admin_token: admin,
            seed,
        }),
    ))
}

async fn public(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<PublicState> {
    let h = app.handle(&id).await?;
    Ok(Json(call(&h, |reply| Cmd::Public { reply }).await?))
}

#[derive(Debug, Deserialize)]
struct JoinBody {
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Joined {
    pub v: u32,
    pub subject: usize,
    pub token: String,
}

async fn join(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<JoinBody>) -> ApiResult<Joined> {
    let h = app.handle(&id).await?;
    let (subject, token) = call(&h, |reply| Cmd::Join { name: b.name, reply }).await?;
    Ok(Json(Joined {
        v: SCHEMA_VERSION,
        subject,
        token,
    }))
}

async fn start(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<PublicState> {
    let h = app.handle(&id).await?;
    let token = bearer(&headers);
    Ok(Json(call(&h, |reply| Cmd::Start { token, reply }).await?))
}

#[derive(Debug, Deserialize)]
struct SubmitBody {
    subject: usize,
    token: String,
    round: usize,
    action: i64,
}

async fn submit(State(app): State<Arc<AppState>>, Path(id): Path<String>, Json(b): Json<SubmitBody>) -> ApiResult<serde_json::Value> {
    let h = app.handle(&id).await?;
    let round = b.round;
    let all_in = call(&h, |reply| Cmd::Submit {
        subject: b.subject,
        token: b.token,
        round: b.round,
        action: b.action,
        reply,
    })
    .await?;
    Ok(Json(json!({ "v": SCHEMA_VERSION, "accepted": true, "round": round, "all_in": all_in })))
}

#[derive(Debug, Deserialize)]
struct SettleBody {
    round: usize,
}

async fn settle(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, Json(b): Json<SettleBody>) -> ApiResult<RoundResult> {
    let h = app.handle(&id).await?;
    let auth = SettleAuth::Admin(bearer(&headers));
    Ok(Json(
        call(&h, |reply| Cmd::Settle {
            round: b.round,
            auth,
            reply: Some(reply),
        })
        .await?,
    ))
}

#[derive(Debug, Deserialize)]
struct FeedbackBody {
    override_bit: Option<u8>,
}

async fn feedback(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, Json(b): Json<FeedbackBody>) -> ApiResult<serde_json::Value> {
    let h = app.handle(&id).await?;
    let token = bearer(&headers);
    call(&h, |reply| Cmd::Feedback {
        token,
        override_bit: b.override_bit,
        reply,
    })
    .await?;
    Ok(Json(json!({ "v": SCHEMA_VERSION, "override_bit": b.override_bit })))
}

async fn admin(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<AdminState> {
    let h = app.handle(&id).await?;
    let token = bearer(&headers);
    Ok(Json(call(&h, |reply| Cmd::Admin { token, reply }).await?))
}

async fn result(State(app): State<Arc<AppState>>, Path((id, round)): Path<(String, usize)>, headers: HeaderMap) -> ApiResult<RoundResult> {
    let h = app.handle(&id).await?;
    let token = bearer(&headers);
    Ok(Json(call(&h, |reply| Cmd::Result { token, round, reply }).await?))
}

async fn subject(State(app): State<Arc<AppState>>, Path((id, subject)): Path<(String, usize)>, Query(q): Query<TokenQuery>) -> ApiResult<SubjectView> {
    let h = app.handle(&id).await?;
    let token = q.token.unwrap_or_default();
    Ok(Json(call(&h, |reply| Cmd::Subject { subject, token, reply }).await?))
}

async fn export_bundle(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> ApiResult<ExportBundle> {
    let h = app.handle(&id).await?;
    let token = bearer(&headers);
    Ok(Json(call(&h, |reply| Cmd::Export { token, reply }).await?))
}

fn last_event_id(headers: &HeaderMap) -> Option<usize> {
    headers.get("last-event-id")?.to_str().ok()?.trim().parse().ok()
}

/// Backlog after `after`, then live frames. The stream ends if the client
/// falls too far behind; reconnecting with `Last-Event-ID` resumes it.
fn sse_stream<F: Serialize + Clone + Send + 'static>(
    backlog: Vec<F>,
    rx: broadcast::Receiver<(usize, F)>,
    after: Option<usize>,
) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    let skip = after.map_or(0, |a| a + 1);
    let next = backlog.len();
    let event = |i: usize, f: &F| Ok(SseEvent::default().id(i.to_string()).json_data(f).expect("frames serialize"));
    let old: Vec<_> = backlog.iter().enumerate().skip(skip).map(|(i, f)| event(i, f)).collect();
    let live = stream::unfold((rx, next.max(skip)), move |(mut rx, want)| async move {
        loop {
            match rx.recv().await {
                Ok((i, f)) if i >= want => return Some((event(i, &f), (rx, i + 1))),
                Ok(_) => continue,
                Err(_) => return None,
            }
        }
    });
    stream::iter(old).chain(live)
}

async fn watch_rounds(State(app): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap) -> Result<impl IntoResponse, ApiError> {
    let h = app.handle(&id).await?;
    let (backlog, rx) = call(&h, |reply| Cmd::WatchRounds { reply }).await?;
    Ok(Sse::new(sse_stream(backlog, rx, last_event_id(&headers))).keep_alive(KeepAlive::default()))
}

async fn watch_analytics(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    Query(q): Query<TokenQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let h = app.handle(&id).await?;
    let token = admin_token(&headers, &q);
    let (backlog, rx) = call(&h, |reply| Cmd::WatchAnalytics { token, reply }).await?;
    Ok(Sse::new(sse_stream(backlog, rx, last_event_id(&headers))).keep_alive(KeepAlive::default()))
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}", get(public))
        .route("/v1/sessions/{id}/join", post(join))
        .route("/v1/sessions/{id}/start", post(start))
        .route("/v1/sessions/{id}/actions", post(submit))
        .route("/v1/sessions/{id}/settle", post(settle))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/admin", get(admin))
        .route("/v1/sessions/{id}/results/{round}", get(result))
        .route("/v1/sessions/{id}/subjects/{subject}", get(subject))
        .route("/v1/sessions/{id}/export", get(export_bundle))
        .route("/v1/sessions/{id}/rounds", get(watch_rounds))
        .route("/v1/sessions/{id}/analytics", get(watch_analytics))
        .with_state(app)
}
