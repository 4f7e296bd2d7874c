//! HTTP/JSON service over in-memory search sessions.
//!
//! Routes:
//! * `POST /sessions` creates a session (201),
//! * `GET /sessions/{id}/display?strategy=greedy|diverse` returns the pending
//!   display, drawing it on first request,
//! * `POST /sessions/{id}/feedback` applies one label per pair
//!   (`0` = first item `a`, `1` = second item `b`),
//! * `GET /sessions/{id}/ranking?k=10`, `GET /sessions/{id}`,
//! * `GET /items/{id}`, `GET /items/{id}/thumbnail`, `GET /healthz`.
//!
//! The confidence policy comes from the `x-kis-policy` request header
//! (`ours`, `pichunter`, `random`); it defaults to `ours` when checkpoints
//! are loaded and to `pichunter` otherwise. Probabilities are sent as
//! decimal strings with 12 significant digits.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query as UrlQuery, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use kis_core::perception::Predictor;
use kis_core::session::Confidences;
use kis_core::{judge, Corpus, Display, Hyperparams, Label, Policy, Query, SearchSession, Strategy};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::cors::CorsLayer;

pub const POLICY_HEADER: &str = "x-kis-policy";

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Shared>,
}

struct Shared {
    corpus: Arc<Corpus>,
    predictors: Arc<Vec<Predictor<f32>>>,
    defaults: Hyperparams,
    /// Directory thumbnails are resolved against.
    media_root: Option<PathBuf>,
    log_dir: Option<PathBuf>,
    sessions: std::sync::Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Demo,
    Live,
}

struct Entry {
    id: String,
    mode: Mode,
    target: Option<usize>,
    created_at: u64,
    session: SearchSession,
    policies: Vec<Policy>,
}

impl AppState {
    pub fn new(corpus: Arc<Corpus>, predictors: Vec<Predictor<f32>>, defaults: Hyperparams) -> Self {
        Self {
            inner: Arc::new(Shared {
                corpus,
                predictors: Arc::new(predictors),
                defaults,
                media_root: None,
                log_dir: std::env::var_os("KIS_LOG_DIR").map(PathBuf::from),
                sessions: Default::default(),
            }),
        }
    }

    pub fn with_media_root(self, root: Option<PathBuf>) -> Self {
        self.map_shared(|s| s.media_root = root)
    }

    pub fn with_log_dir(self, dir: Option<PathBuf>) -> Self {
        self.map_shared(|s| s.log_dir = dir)
    }

    fn map_shared(self, f: impl FnOnce(&mut Shared)) -> Self {
        let mut shared = Arc::try_unwrap(self.inner).unwrap_or_else(|_| panic!("configure the service before sharing it"));
        f(&mut shared);
        Self {
            inner: Arc::new(shared),
        }
    }

    fn default_policy(&self) -> Policy {
        if self.inner.predictors.is_empty() {
            Policy::PicHunter
        } else {
            Policy::Ours
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/display", get(display))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/ranking", get(ranking))
        .route("/items/{id}", get(item))
        .route("/items/{id}/thumbnail", get(thumbnail))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    extra: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            extra: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl From<kis_core::Error> for ApiError {
    fn from(e: kis_core::Error) -> Self {
        use kis_core::Error as E;
        let status = match e {
            E::NoPendingDisplay => StatusCode::CONFLICT,
            E::StepLimit(_) => StatusCode::GONE,
            E::Underflow | E::NonFiniteLoss { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let (Some(extra), Some(obj)) = (self.extra, body.as_object_mut()) {
            if let Some(e) = extra.as_object() {
                obj.extend(e.clone());
            }
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `p` with 12 significant digits.
pub fn prob_string(p: f64) -> String {
    format!("{p:.11e}")
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ItemView {
    pub index: usize,
    pub item_id: String,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thumbnail_uri: Option<String>,
}

fn item_view(corpus: &Corpus, index: usize) -> ItemView {
    let meta = &corpus.items()[index];
    ItemView {
        index,
        item_id: meta.item_id.clone(),
        label: meta.label.clone(),
        thumbnail_uri: meta.thumbnail_uri.clone(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RankedItem {
    pub rank: usize,
    #[serde(flatten)]
    pub item: ItemView,
    pub probability: String,
}

fn top_listing(corpus: &Corpus, session: &SearchSession, k: usize) -> Vec<RankedItem> {
    let state = session.state();
    state
        .top_k(k)
        .into_iter()
        .enumerate()
        .map(|(r, i)| RankedItem {
            rank: r + 1,
            item: item_view(corpus, i),
            probability: prob_string(state.probs()[i]),
        })
        .collect()
}

async fn healthz(State(app): State<AppState>) -> Json<serde_json::Value> {
    let corpus = &app.inner.corpus;
    let sessions = app.inner.sessions.lock().expect("session registry poisoned").len();
    Json(json!({
        "status": "ok",
        "items": corpus.len(),
        "spaces": corpus.spaces().iter().map(|s| json!({"space_id": s.id(), "dim": s.dim()})).collect::<Vec<_>>(),
        "checkpoints": !app.inner.predictors.is_empty(),
        "default_policy": app.default_policy().name(),
        "sessions": sessions,
    }))
}

/// Partial override of the service's default hyperparameters.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    pub rho: Option<f64>,
    pub num_pairs: Option<usize>,
    pub n_display: Option<usize>,
    pub n_prune: Option<usize>,
    pub max_steps: Option<usize>,
    pub init_temperature: Option<f64>,
}

impl ParamOverrides {
    fn apply(&self, base: &Hyperparams) -> Hyperparams {
        let mut p = base.clone();
        if let Some(x) = self.rho {
            p.rho = x;
        }
        if let Some(x) = self.num_pairs {
            p.num_pairs = x;
        }
        if let Some(x) = self.n_display {
            p.n_display = x;
        }
        if let Some(x) = self.n_prune {
            p.n_prune = x;
        }
        if let Some(x) = self.max_steps {
            p.max_steps = x;
        }
        if let Some(x) = self.init_temperature {
            p.init_temperature = x;
        }
        p
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub session_id: Option<String>,
    pub mode: Mode,
    /// One query vector per space.
    #[serde(default)]
    pub query: Option<Vec<Vec<f32>>>,
    /// Demo target; with `noise` and no `query`, the query is the target's
    /// rows perturbed by Gaussian noise of scale `noise`.
    #[serde(default)]
    pub target_id: Option<String>,
    #[serde(default)]
    pub noise: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: ParamOverrides,
    #[serde(default)]
    pub top_k: Option<usize>,
}

async fn create_session(State(app): State<AppState>, body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let corpus = app.inner.corpus.clone();
    let params = req.params.apply(&app.inner.defaults);
    params.validate()?;
    let seed = req.seed.unwrap_or_else(rand::random);

    let target = match &req.target_id {
        Some(id) => Some(corpus.item_index(id).ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}")))?),
        None => None,
    };
    if req.mode == Mode::Demo && target.is_none() {
        return Err(ApiError::bad_request("demo sessions need a target_id"));
    }
    let vectors = match (&req.query, target, req.noise) {
        (Some(q), _, None) => {
            if q.len() != corpus.num_spaces() {
                return Err(ApiError::bad_request(format!(
                    "query needs one vector per space ({}), got {}",
                    corpus.num_spaces(),
                    q.len()
                )));
            }
            for (v, s) in q.iter().zip(corpus.spaces()) {
                if v.len() != s.dim() {
                    return Err(ApiError::bad_request(format!("query for space {} must have {} values", s.id(), s.dim())));
                }
                if v.iter().any(|x| !x.is_finite()) || v.iter().all(|&x| x == 0.0) {
                    return Err(ApiError::bad_request(format!("query for space {} must be finite and non-zero", s.id())));
                }
            }
            q.clone()
        }
        (None, Some(t), Some(sigma)) if sigma >= 0.0 && sigma.is_finite() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            crate::synth::noisy_query(&corpus, t, sigma, &mut rng)
        }
        (None, Some(_), Some(_)) => return Err(ApiError::bad_request("noise must be a finite value ≥ 0")),
        _ => return Err(ApiError::bad_request("give either query vectors, or target_id with noise")),
    };

    let mut session = SearchSession::new(&corpus, &Query::Vectors(vectors), params, seed)?;
    session.state_mut().set_target(target);
    let id = req.session_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if id.is_empty() || id.len() > 128 {
        return Err(ApiError::bad_request("session_id must be 1-128 characters"));
    }
    let k = req.top_k.unwrap_or(10);
    let body = json!({
        "session_id": id,
        "mode": req.mode,
        "seed": seed,
        "step": 0,
        "max_steps": session.params().max_steps,
        "num_pairs": session.params().num_pairs,
        "active": session.state().active_count(),
        "top_k": top_listing(&corpus, &session, k),
        "target_rank": target.map(|t| session.state().rank_of(t).rank),
    });
    let entry = Entry {
        id: id.clone(),
        mode: req.mode,
        target,
        created_at: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        session,
        policies: Vec::new(),
    };
    {
        let mut sessions = app.inner.sessions.lock().expect("session registry poisoned");
        if sessions.contains_key(&id) {
            return Err(ApiError::conflict(format!("session {id:?} already exists")));
        }
        snapshot(&app, &entry);
        sessions.insert(id, Arc::new(Mutex::new(entry)));
    }
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

fn lookup(app: &AppState, id: &str) -> ApiResult<Arc<Mutex<Entry>>> {
    app.inner
        .sessions
        .lock()
        .expect("session registry poisoned")
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))
}

async fn session_info(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    let entry = lookup(&app, &id)?;
    let e = entry.lock().await;
    Ok(Json(json!({
        "session_id": e.id,
        "mode": e.mode,
        "created_at": e.created_at,
        "seed": e.session.seed(),
        "step": e.session.step(),
        "max_steps": e.session.params().max_steps,
        "params": e.session.params(),
        "pending_display": e.session.pending_display().is_some(),
        "finished": e.session.is_finished(),
        "policies": e.policies,
        "target_rank": e.target.map(|t| e.session.state().rank_of(t).rank),
    })))
}

#[derive(Debug, Deserialize)]
pub struct DisplayQuery {
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PairView {
    pub a: ItemView,
    pub b: ItemView,
}

fn display_body(app: &AppState, e: &Entry, display: &Display) -> ApiResult<serde_json::Value> {
    let corpus = &app.inner.corpus;
    let pairs: Vec<PairView> = display
        .pairs
        .iter()
        .map(|p| PairView {
            a: item_view(corpus, p.a),
            b: item_view(corpus, p.b),
        })
        .collect();
    let mut body = json!({
        "session_id": e.id,
        "step": e.session.step(),
        "strategy": display.strategy,
        "pairs": pairs,
    });
    if let (Mode::Demo, Some(t)) = (e.mode, e.target) {
        let labels = display
            .pairs
            .iter()
            .map(|&p| judge(corpus, p, t).map(|v| v.majority.bit()))
            .collect::<Result<Vec<u8>, _>>()?;
        body["oracle_labels"] = json!(labels);
    }
    Ok(body)
}

async fn display(State(app): State<AppState>, Path(id): Path<String>, UrlQuery(q): UrlQuery<DisplayQuery>) -> ApiResult<Json<serde_json::Value>> {
    let strategy = match q.strategy.as_deref() {
        None | Some("greedy") => Strategy::Greedy,
        Some("diverse") => Strategy::Diverse,
        Some(other) => return Err(ApiError::bad_request(format!("unknown strategy {other:?}"))),
    };
    let entry = lookup(&app, &id)?;
    let mut e = entry.lock().await;
    if e.session.is_finished() {
        let mut err = ApiError::new(StatusCode::GONE, "the session has used all of its steps");
        err.extra = Some(json!({ "ranking": format!("/sessions/{id}/ranking") }));
        return Err(err);
    }
    let corpus = app.inner.corpus.clone();
    let display = e.session.next_display(&corpus, strategy)?.clone();
    Ok(Json(display_body(&app, &e, &display)?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Feedback {
    pub labels: Vec<u8>,
    /// Step the labels were given for; a mismatch is rejected as stale.
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

fn policy_from(app: &AppState, headers: &HeaderMap) -> ApiResult<Policy> {
    match headers.get(POLICY_HEADER) {
        None => Ok(app.default_policy()),
        Some(v) => {
            let s = v.to_str().map_err(|_| ApiError::bad_request("policy header is not ASCII"))?;
            let policy: Policy = s.trim().to_ascii_lowercase().parse()?;
            if policy == Policy::Ours && app.inner.predictors.is_empty() {
                return Err(ApiError::bad_request("policy ours needs checkpoints; start the service with --checkpoints"));
            }
            Ok(policy)
        }
    }
}

async fn feedback(
    State(app): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<Feedback>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Json(fb) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let policy = policy_from(&app, &headers)?;
    let entry = lookup(&app, &id)?;
    let mut e = entry.lock().await;
    let pending = e
        .session
        .pending_display()
        .ok_or_else(|| ApiError::conflict("no pending display; request one before sending feedback"))?;
    if let Some(step) = fb.step {
        if step != e.session.step() {
            return Err(ApiError::conflict(format!(
                "labels are for step {step} but the session is at step {}",
                e.session.step()
            )));
        }
    }
    if fb.labels.len() != pending.len() {
        return Err(ApiError::bad_request(format!(
            "expected {} labels, got {}",
            pending.len(),
            fb.labels.len()
        )));
    }
    let labels = fb
        .labels
        .iter()
        .map(|&b| Label::from_bit(b).ok_or_else(|| ApiError::bad_request(format!("label {b} is not 0 or 1"))))
        .collect::<ApiResult<Vec<Label>>>()?;
    let corpus = app.inner.corpus.clone();
    let source = Confidences::Policy {
        policy,
        predictors: &app.inner.predictors,
        threshold: false,
    };
    let confidences = e.session.submit(&corpus, &labels, source)?;
    e.policies.push(policy);
    snapshot(&app, &e);
    let k = fb.top_k.unwrap_or(10);
    Ok(Json(json!({
        "session_id": e.id,
        "step": e.session.step(),
        "finished": e.session.is_finished(),
        "policy": policy.name(),
        "confidences": confidences,
        "top_k": top_listing(&corpus, &e.session, k),
        "target_rank": e.target.map(|t| e.session.state().rank_of(t).rank),
    })))
}

#[derive(Debug, Deserialize)]
pub struct RankingQuery {
    pub k: Option<usize>,
}

async fn ranking(State(app): State<AppState>, Path(id): Path<String>, UrlQuery(q): UrlQuery<RankingQuery>) -> ApiResult<Json<serde_json::Value>> {
    let k = q.k.unwrap_or(10);
    if k == 0 {
        return Err(ApiError::bad_request("k must be at least 1"));
    }
    let entry = lookup(&app, &id)?;
    let e = entry.lock().await;
    Ok(Json(json!({
        "session_id": e.id,
        "step": e.session.step(),
        "ranking": top_listing(&app.inner.corpus, &e.session, k),
        "target_rank": e.target.map(|t| e.session.state().rank_of(t).rank),
    })))
}

async fn item(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ItemView>> {
    let corpus = &app.inner.corpus;
    let i = corpus.item_index(&id).ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}")))?;
    Ok(Json(item_view(corpus, i)))
}

async fn thumbnail(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let corpus = &app.inner.corpus;
    let i = corpus.item_index(&id).ok_or_else(|| ApiError::not_found(format!("unknown item {id:?}")))?;
    let uri = corpus.items()[i]
        .thumbnail_uri
        .as_deref()
        .ok_or_else(|| ApiError::not_found("item has no thumbnail"))?;
    let root = app.inner.media_root.as_ref().ok_or_else(|| ApiError::not_found("thumbnails are not served"))?;
    let rel = std::path::Path::new(uri);
    if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(ApiError::not_found("thumbnail is not a local file"));
    }
    let bytes = tokio::fs::read(root.join(rel))
        .await
        .map_err(|_| ApiError::not_found("thumbnail file missing"))?;
    let mime = match rel.extension().and_then(|e| e.to_str()) {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    };
    Ok(([(axum::http::header::CONTENT_TYPE, mime)], bytes).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub mode: Mode,
    pub target: Option<usize>,
    pub seed: u64,
    pub created_at: u64,
    pub params: Hyperparams,
    pub step: usize,
    pub policies: Vec<Policy>,
    pub history: Vec<kis_core::engine::HistoryEntry>,
    /// `(index, probability)` for every candidate above 1e-12.
    pub probs: Vec<(usize, String)>,
}

fn snapshot(app: &AppState, e: &Entry) {
    let Some(dir) = &app.inner.log_dir else { return };
    let state = e.session.state();
    let snap = Snapshot {
        session_id: e.id.clone(),
        mode: e.mode,
        target: e.target,
        seed: e.session.seed(),
        created_at: e.created_at,
        params: e.session.params().clone(),
        step: e.session.step(),
        policies: e.policies.clone(),
        history: state.history().to_vec(),
        probs: state
            .active_items()
            .iter()
            .filter(|&&i| state.probs()[i] > 1e-12)
            .map(|&i| (i, prob_string(state.probs()[i])))
            .collect(),
    };
    let safe: String = e.id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    let result = std::fs::create_dir_all(dir).map_err(|err| crate::Error::io(dir, err)).and_then(|_| crate::format::write_json(&dir.join(format!("{safe}.json")), &snap));
    if let Err(err) = result {
        log::warn!("could not write snapshot for session {}: {err}", e.id);
    }
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
