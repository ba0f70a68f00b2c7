//! Shared state and HTTP handlers.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use lru::LruCache;
use pdm_core::cf::{fit_explainer, Explainer, DEFAULT_NUM_DISTRACTORS};
use pdm_core::data::{Dataset, Label};
use pdm_core::tcn::{argmax, predict_proba};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::events::{Event, ExplainOutcome, ExplainParams, SessionEvent};
use crate::explain::run_explain;
use crate::store::{DataDir, DatasetSummary, ModelSummary, SessionMeta};
use crate::ServiceConfig;

/// In-memory view of a session, rebuilt from its event log on first access.
struct SessionLog {
    meta: SessionMeta,
    next_seq: u64,
    /// Explain request id -> decision, once one is recorded.
    requests: HashMap<String, Option<bool>>,
    flagged: HashSet<u64>,
}

impl SessionLog {
    fn from_events(meta: SessionMeta, events: &[SessionEvent]) -> Self {
        let mut log = SessionLog {
            meta,
            next_seq: events.last().map_or(0, |e| e.seq + 1),
            requests: HashMap::new(),
            flagged: HashSet::new(),
        };
        for e in events {
            match &e.event {
                Event::AnomalyDetected { window_id, .. } => {
                    log.flagged.insert(*window_id);
                }
                Event::ExplainRequested { request_id, .. } => {
                    log.requests.insert(request_id.clone(), None);
                }
                Event::Accepted { request_id, .. } => {
                    log.requests.insert(request_id.clone(), Some(true));
                }
                Event::Rejected { request_id, .. } => {
                    log.requests.insert(request_id.clone(), Some(false));
                }
                Event::CounterfactualReturned { .. } => {}
            }
        }
        log
    }
}

type ExplainerKey = (String, String);

struct Inner {
    data: DataDir,
    config: ServiceConfig,
    explainers: Mutex<LruCache<ExplainerKey, Arc<Explainer>>>,
    datasets: Mutex<LruCache<String, Arc<Dataset>>>,
    sessions: Mutex<HashMap<String, Arc<tokio::sync::Mutex<SessionLog>>>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker failed: {e}")))?
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let size = config.explainer_cache_size;
        AppState {
            inner: Arc::new(Inner {
                data: DataDir::new(config.data_dir.clone()),
                explainers: Mutex::new(LruCache::new(size)),
                datasets: Mutex::new(LruCache::new(size)),
                sessions: Mutex::new(HashMap::new()),
                config,
            }),
        }
    }

    pub fn data(&self) -> &DataDir {
        &self.inner.data
    }

    /// Number of explainers currently cached.
    pub fn cached_explainers(&self) -> usize {
        self.inner.explainers.lock().expect("cache lock").len()
    }

    async fn dataset(&self, id: &str) -> Result<Arc<Dataset>> {
        if let Some(ds) = self.inner.datasets.lock().expect("cache lock").get(id) {
            return Ok(ds.clone());
        }
        let data = self.inner.data.clone();
        let owned = id.to_string();
        let ds = Arc::new(blocking(move || data.load_dataset(&owned)).await?);
        self.inner.datasets.lock().expect("cache lock").put(id.to_string(), ds.clone());
        Ok(ds)
    }

    /// Fits (or reuses) the explainer for a (model, labeled dataset) pair.
    async fn explainer(&self, model_id: &str, dataset_id: &str) -> Result<Arc<Explainer>> {
        let key = (model_id.to_string(), dataset_id.to_string());
        if let Some(ex) = self.inner.explainers.lock().expect("cache lock").get(&key) {
            return Ok(ex.clone());
        }
        let train = self.dataset(dataset_id).await?;
        let data = self.inner.data.clone();
        let model_id = model_id.to_string();
        let ex = blocking(move || {
            let model = data.load_model(&model_id)?;
            if model.config.in_channels != train.channels() {
                return Err(ServiceError::Shape(format!(
                    "model expects {} channels, explainer dataset has {}",
                    model.config.in_channels,
                    train.channels()
                )));
            }
            Ok(Arc::new(fit_explainer(Arc::new(model), &train)?))
        })
        .await?;
        self.inner.explainers.lock().expect("cache lock").put(key, ex.clone());
        Ok(ex)
    }

    async fn session(&self, id: &str) -> Result<Arc<tokio::sync::Mutex<SessionLog>>> {
        if let Some(s) = self.inner.sessions.lock().expect("session lock").get(id) {
            return Ok(s.clone());
        }
        let data = self.inner.data.clone();
        let owned = id.to_string();
        let log = blocking(move || {
            let meta = data.read_session(&owned)?;
            let events = data.read_events(&owned)?;
            Ok(SessionLog::from_events(meta, &events))
        })
        .await?;
        let mut sessions = self.inner.sessions.lock().expect("session lock");
        Ok(sessions
            .entry(id.to_string())
            .or_insert_with(|| Arc::new(tokio::sync::Mutex::new(log)))
            .clone())
    }

    /// Appends to the on-disk log first, then advances the in-memory sequence.
    fn append(&self, log: &mut SessionLog, event: Event) -> Result<u64> {
        let record = SessionEvent {
            seq: log.next_seq,
            timestamp_ms: now_ms(),
            event,
        };
        self.inner.data.append_event(&log.meta.id, &record)?;
        log.next_seq += 1;
        Ok(record.seq)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/datasets", get(list_datasets))
        .route("/models", get(list_models))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/windows", get(session_windows))
        .route("/sessions/{id}/explain", post(explain))
        .route("/sessions/{id}/decisions", post(record_decision))
        .route("/sessions/{id}/events", get(session_events))
        .with_state(state)
}

async fn list_datasets(State(state): State<AppState>) -> Result<Json<Vec<DatasetSummary>>> {
    let data = state.data().clone();
    Ok(Json(blocking(move || data.list_datasets()).await?))
}

async fn list_models(State(state): State<AppState>) -> Result<Json<Vec<ModelSummary>>> {
    let data = state.data().clone();
    Ok(Json(blocking(move || data.list_models()).await?))
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub dataset_id: String,
    pub model_id: String,
    /// Labeled dataset for distractors; defaults to `dataset_id`.
    pub explainer_dataset_id: Option<String>,
}

async fn create_session(
    State(state): State<AppState>,
    Json(body): Json<CreateSession>,
) -> Result<(StatusCode, Json<SessionMeta>)> {
    let explainer_dataset_id = body.explainer_dataset_id.unwrap_or_else(|| body.dataset_id.clone());
    let data = state.data().clone();
    let ids = (body.dataset_id.clone(), explainer_dataset_id.clone(), body.model_id.clone());
    let (ds, ex_ds, model) = blocking(move || {
        Ok((
            data.dataset_summary(&ids.0)?,
            data.dataset_summary(&ids.1)?,
            data.load_model(&ids.2)?,
        ))
    })
    .await?;
    if ds.channel_names.len() != model.config.in_channels {
        return Err(ServiceError::Shape(format!(
            "model expects {} channels, dataset {:?} has {}",
            model.config.in_channels,
            ds.id,
            ds.channel_names.len()
        )));
    }
    if ex_ds.channel_names.len() != ds.channel_names.len() || ex_ds.window_len != ds.window_len {
        return Err(ServiceError::Shape(format!(
            "explainer dataset {:?} is {}x{}, session dataset {:?} is {}x{}",
            ex_ds.id,
            ex_ds.channel_names.len(),
            ex_ds.window_len,
            ds.id,
            ds.channel_names.len(),
            ds.window_len
        )));
    }
    state.explainer(&body.model_id, &explainer_dataset_id).await?;

    let meta = SessionMeta {
        id: uuid::Uuid::new_v4().simple().to_string(),
        dataset_id: body.dataset_id,
        model_id: body.model_id,
        explainer_dataset_id,
        created_ms: now_ms(),
    };
    let data = state.data().clone();
    let persisted = meta.clone();
    blocking(move || data.create_session(&persisted)).await?;
    let log = SessionLog::from_events(meta.clone(), &[]);
    state
        .inner
        .sessions
        .lock()
        .expect("session lock")
        .insert(meta.id.clone(), Arc::new(tokio::sync::Mutex::new(log)));
    Ok((StatusCode::CREATED, Json(meta)))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionMeta>> {
    let session = state.session(&id).await?;
    let meta = session.lock().await.meta.clone();
    Ok(Json(meta))
}

#[derive(Debug, Deserialize)]
pub struct WindowRange {
    /// First window position (inclusive); defaults to 0.
    pub from: Option<usize>,
    /// Last window position (exclusive); defaults to the dataset length.
    pub to: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WindowView {
    pub id: u64,
    pub label: Option<Label>,
    pub values: Vec<Vec<f64>>,
    pub prediction: Label,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WindowsResponse {
    pub session_id: String,
    pub from: usize,
    pub to: usize,
    pub channel_names: Vec<String>,
    pub windows: Vec<WindowView>,
    /// AnomalyDetected events appended by this call.
    pub new_anomaly_events: usize,
}

async fn session_windows(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(range): Query<WindowRange>,
) -> Result<Json<WindowsResponse>> {
    let session = state.session(&id).await?;
    let meta = session.lock().await.meta.clone();
    let ds = state.dataset(&meta.dataset_id).await?;
    let ex = state.explainer(&meta.model_id, &meta.explainer_dataset_id).await?;
    let from = range.from.unwrap_or(0);
    let to = range.to.unwrap_or(ds.len());
    if from > to || to > ds.len() {
        return Err(ServiceError::Range(format!(
            "window range {from}..{to} is outside 0..{}",
            ds.len()
        )));
    }
    let views = {
        let ds = ds.clone();
        blocking(move || {
            let slice = &ds.windows[from..to];
            let probs = predict_proba(ex.model(), slice)?;
            Ok(slice
                .iter()
                .zip(probs)
                .map(|(w, p)| WindowView {
                    id: w.id,
                    label: w.label,
                    values: w.values.clone(),
                    prediction: Label::from_index(argmax(&p)).expect("binary model"),
                    probabilities: p,
                })
                .collect::<Vec<_>>())
        })
        .await?
    };

    let mut log = session.lock().await;
    let mut new_events = 0;
    for v in views.iter().filter(|v| v.prediction == Label::Anomalous) {
        let first = log.flagged.insert(v.id);
        if first || state.inner.config.repeat_anomaly_events {
            state.append(
                &mut log,
                Event::AnomalyDetected {
                    window_id: v.id,
                    probabilities: v.probabilities.clone(),
                },
            )?;
            new_events += 1;
        }
    }
    Ok(Json(WindowsResponse {
        session_id: id,
        from,
        to,
        channel_names: ds.channel_names.clone(),
        windows: views,
        new_anomaly_events: new_events,
    }))
}

/// A channel named either by index or by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChannelRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExplainRequest {
    pub window_id: u64,
    pub target_class: Label,
    #[serde(default)]
    pub locked_channels: Vec<ChannelRef>,
    pub num_distractors: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub request_id: String,
    #[serde(flatten)]
    pub outcome: ExplainOutcome,
}

fn resolve_locks(refs: &[ChannelRef], names: &[String]) -> Result<Vec<usize>> {
    let mut out: Vec<usize> = refs
        .iter()
        .map(|r| match r {
            ChannelRef::Index(i) if *i < names.len() => Ok(*i),
            ChannelRef::Index(i) => Err(ServiceError::BadRequest(format!(
                "locked channel {i} does not exist ({} channels)",
                names.len()
            ))),
            ChannelRef::Name(n) => names
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| ServiceError::BadRequest(format!("unknown channel {n:?}"))),
        })
        .collect::<Result<_>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

async fn explain(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<ExplainRequest>,
) -> Result<Json<ExplainResponse>> {
    let session = state.session(&id).await?;
    // Held for the whole request so each CounterfactualReturned directly
    // follows its ExplainRequested in the log.
    let mut log = session.lock().await;
    let ds = state.dataset(&log.meta.dataset_id).await?;
    let ex = state.explainer(&log.meta.model_id, &log.meta.explainer_dataset_id).await?;
    if ds.window(body.window_id).is_none() {
        return Err(ServiceError::NotFound(format!("window {}", body.window_id)));
    }
    let num_distractors = body.num_distractors.unwrap_or(DEFAULT_NUM_DISTRACTORS);
    if num_distractors == 0 {
        return Err(ServiceError::BadRequest("num_distractors must be >= 1".into()));
    }
    let params = ExplainParams {
        window_id: body.window_id,
        target_class: body.target_class,
        locked_channels: resolve_locks(&body.locked_channels, ex.channel_names())?,
        num_distractors,
    };

    let request_id = uuid::Uuid::new_v4().simple().to_string();
    state.append(
        &mut log,
        Event::ExplainRequested {
            request_id: request_id.clone(),
            params: params.clone(),
        },
    )?;
    log.requests.insert(request_id.clone(), None);
    let outcome = blocking(move || run_explain(&ex, &ds, &params)).await?;
    state.append(
        &mut log,
        Event::CounterfactualReturned {
            request_id: request_id.clone(),
            outcome: outcome.clone(),
        },
    )?;
    Ok(Json(ExplainResponse { request_id, outcome }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub request_id: String,
    pub accepted: bool,
    pub note: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionAck {
    pub request_id: String,
    pub accepted: bool,
    /// Sequence number of the logged decision event.
    pub seq: u64,
}

async fn record_decision(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<DecisionRequest>,
) -> Result<Json<DecisionAck>> {
    let session = state.session(&id).await?;
    let mut log = session.lock().await;
    match log.requests.get(&body.request_id) {
        None => return Err(ServiceError::NotFound(format!("explain request {:?}", body.request_id))),
        Some(Some(prev)) => {
            return Err(ServiceError::Conflict(format!(
                "request {:?} was already {}",
                body.request_id,
                if *prev { "accepted" } else { "rejected" }
            )))
        }
        Some(None) => {}
    }
    let request_id = body.request_id.clone();
    let event = if body.accepted {
        Event::Accepted { request_id: request_id.clone(), note: body.note }
    } else {
        Event::Rejected { request_id: request_id.clone(), note: body.note }
    };
    let seq = state.append(&mut log, event)?;
    log.requests.insert(request_id.clone(), Some(body.accepted));
    Ok(Json(DecisionAck {
        request_id,
        accepted: body.accepted,
        seq,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventsResponse {
    pub session_id: String,
    pub events: Vec<SessionEvent>,
}

async fn session_events(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<EventsResponse>> {
    let session = state.session(&id).await?;
    let _guard = session.lock().await;
    let data = state.data().clone();
    let owned = id.clone();
    let events = blocking(move || data.read_events(&owned)).await?;
    Ok(Json(EventsResponse { session_id: id, events }))
}
