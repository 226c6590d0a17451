//! HTTP surface for human verdicts on augmentation batches.
//!
//! ```text
//! GET  /batches                          current batch per label
//! GET  /batches/{batch_id}/pending       items still awaiting a verdict
//! GET  /batches/{batch_id}/progress      counts, running accuracy, round
//! POST /items/{item_id}/verdict          {passed, feedback?, idempotency_key?}
//! POST /batches/{batch_id}/advance       close the round
//! ```
//!
//! All state sits behind one mutex, so every write is serialized and a read
//! after a write always sees it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::augmenter::{AdvanceReport, AugmentError, AugmentSession, BatchItem, SessionStatus};
use crate::gateway::Gateway;
use crate::ingest::NotePool;
use crate::taxonomy::SdohLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemStatus {
    Pending,
    Verdicted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItemView {
    pub item_id: String,
    pub batch_id: String,
    pub label: SdohLabel,
    pub generated_text: String,
    pub definition_text: String,
    pub few_shot_snippets: Vec<String>,
    pub status: ItemStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passed: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressView {
    pub batch_id: String,
    pub label: SdohLabel,
    pub verdicted: usize,
    pub passed: usize,
    pub total: usize,
    pub running_accuracy: f64,
    pub threshold: f64,
    pub round_index: usize,
    pub max_rounds: usize,
    pub session_status: SessionStatus,
    /// False once the batch's round has been closed.
    pub open: bool,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct VerdictRequest {
    pub passed: bool,
    #[serde(default)]
    pub feedback: Option<String>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(String),
    Conflict { code: &'static str, message: String },
    Unprocessable { code: &'static str, message: String },
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::NotFound(_) => "NotFound",
            ApiError::Conflict { code, .. } | ApiError::Unprocessable { code, .. } => code,
            ApiError::Internal(_) => "Internal",
        }
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ApiError::NotFound(m) | ApiError::Internal(m) => f.write_str(m),
            ApiError::Conflict { message, .. } | ApiError::Unprocessable { message, .. } => f.write_str(message),
        }
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "NotFound", m),
            ApiError::Conflict { code, message } => (StatusCode::CONFLICT, code, message),
            ApiError::Unprocessable { code, message } => (StatusCode::UNPROCESSABLE_ENTITY, code, message),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal", m),
        };
        (status, Json(json!({"error": code, "message": message}))).into_response()
    }
}

impl From<AugmentError> for ApiError {
    fn from(e: AugmentError) -> Self {
        let message = e.to_string();
        match e {
            AugmentError::UnknownItem(_) => ApiError::NotFound(message),
            AugmentError::AlreadyVerdicted(_) => ApiError::Conflict {
                code: "AlreadyVerdicted",
                message,
            },
            AugmentError::IncompleteVerdicts(_) => ApiError::Conflict {
                code: "IncompleteVerdicts",
                message,
            },
            AugmentError::ItemFailed(_) => ApiError::Conflict {
                code: "ItemFailed",
                message,
            },
            AugmentError::Precondition(_) => ApiError::Conflict {
                code: "SessionClosed",
                message,
            },
            AugmentError::MissingFeedback(_) => ApiError::Unprocessable {
                code: "MissingFeedback",
                message,
            },
            _ => ApiError::Internal(message),
        }
    }
}

/// Everything the service mutates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewState {
    pub sessions: BTreeMap<SdohLabel, AugmentSession>,
    /// Reports of closed rounds by batch id; replayed on duplicate advances.
    #[serde(default)]
    pub reports: BTreeMap<String, AdvanceReport>,
    /// Verdicts already applied, by (item id, idempotency key).
    #[serde(default)]
    pub applied_keys: BTreeMap<String, String>,
    #[serde(default)]
    pub transitions: u64,
}

impl ReviewState {
    pub fn new(sessions: impl IntoIterator<Item = AugmentSession>) -> Self {
        ReviewState {
            sessions: sessions.into_iter().map(|s| (s.state.label, s)).collect(),
            reports: BTreeMap::new(),
            applied_keys: BTreeMap::new(),
            transitions: 0,
        }
    }

    fn session_for_batch(&self, batch_id: &str) -> Option<&AugmentSession> {
        self.sessions
            .values()
            .find(|s| s.batch.batch_id == batch_id || s.batches.iter().any(|b| b.batch_id == batch_id))
    }

    /// (session label, batch id, whether that batch is still open).
    fn find_item(&self, item_id: &str) -> Option<(SdohLabel, String, bool)> {
        self.sessions.values().find_map(|s| {
            if s.batch.item(item_id).is_some() && !s.batches.iter().any(|b| b.batch_id == s.batch.batch_id) {
                return Some((s.state.label, s.batch.batch_id.clone(), s.status == SessionStatus::Reviewing));
            }
            s.batches
                .iter()
                .find(|b| b.item(item_id).is_some())
                .map(|b| (s.state.label, b.batch_id.clone(), false))
        })
    }
}

struct Inner {
    state: ReviewState,
    pool: NotePool,
    persist_dir: Option<PathBuf>,
}

#[derive(Clone)]
pub struct ReviewService {
    inner: Arc<Mutex<Inner>>,
    gateway: Arc<Gateway>,
}

fn item_view(session: &AugmentSession, batch_id: &str, item: &BatchItem) -> ReviewItemView {
    let status = if item.is_failed() {
        ItemStatus::Failed
    } else if item.verdict.is_some() {
        ItemStatus::Verdicted
    } else {
        ItemStatus::Pending
    };
    ReviewItemView {
        item_id: item.item_id.clone(),
        batch_id: batch_id.to_string(),
        label: session.state.label,
        generated_text: item.generated_text.clone(),
        definition_text: session.definition.definition_text.clone(),
        few_shot_snippets: session.definition.few_shot_snippets.clone(),
        status,
        passed: item.verdict.as_ref().map(|v| v.passed),
        feedback: item.verdict.as_ref().and_then(|v| v.feedback.clone()),
    }
}

fn progress_of(session: &AugmentSession, batch_id: &str) -> Option<ProgressView> {
    let (batch, open) = if session.batch.batch_id == batch_id && session.status == SessionStatus::Reviewing {
        (&session.batch, true)
    } else {
        (session.batches.iter().find(|b| b.batch_id == batch_id)?, false)
    };
    Some(ProgressView {
        batch_id: batch.batch_id.clone(),
        label: batch.label,
        verdicted: batch.verdicted_count(),
        passed: batch.passed_count(),
        total: batch.verifiable_count(),
        running_accuracy: batch.running_accuracy(),
        threshold: session.config.threshold,
        round_index: batch.round_index,
        max_rounds: session.config.max_rounds,
        session_status: session.status,
        open,
    })
}

impl ReviewService {
    pub fn new(state: ReviewState, pool: NotePool, gateway: Arc<Gateway>) -> Self {
        ReviewService {
            inner: Arc::new(Mutex::new(Inner {
                state,
                pool,
                persist_dir: None,
            })),
            gateway,
        }
    }

    /// Writes `review_state.json` and `pool.ndjson` there after every change.
    pub fn with_persistence(self, dir: impl Into<PathBuf>) -> Self {
        self.inner.lock().unwrap().persist_dir = Some(dir.into());
        self
    }

    pub fn snapshot(&self) -> (ReviewState, NotePool) {
        let inner = self.inner.lock().unwrap();
        (inner.state.clone(), inner.pool.clone())
    }

    fn persist(inner: &Inner) -> Result<(), ApiError> {
        let Some(dir) = &inner.persist_dir else { return Ok(()) };
        let text = serde_json::to_string_pretty(&inner.state).map_err(|e| ApiError::Internal(e.to_string()))?;
        std::fs::create_dir_all(dir).map_err(|e| ApiError::Internal(e.to_string()))?;
        std::fs::write(dir.join("review_state.json"), text).map_err(|e| ApiError::Internal(e.to_string()))?;
        inner
            .pool
            .save(dir.join("pool.ndjson"))
            .map_err(|e| ApiError::Internal(e.to_string()))
    }

    pub fn current_batches(&self) -> Vec<ProgressView> {
        let inner = self.inner.lock().unwrap();
        inner
            .state
            .sessions
            .values()
            .filter_map(|s| progress_of(s, &s.batch.batch_id))
            .collect()
    }

    pub fn list_pending(&self, batch_id: &str) -> Result<Vec<ReviewItemView>, ApiError> {
        let inner = self.inner.lock().unwrap();
        let session = inner
            .state
            .session_for_batch(batch_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown batch `{batch_id}`")))?;
        if session.batch.batch_id != batch_id || session.status != SessionStatus::Reviewing {
            return Ok(Vec::new());
        }
        Ok(session
            .batch
            .pending()
            .map(|i| item_view(session, batch_id, i))
            .collect())
    }

    pub fn submit_verdict(&self, item_id: &str, req: VerdictRequest) -> Result<ReviewItemView, ApiError> {
        let mut guard = self.inner.lock().unwrap();
        let inner = &mut *guard;
        let key = req.idempotency_key.as_ref().map(|k| format!("{item_id}\u{1f}{k}"));
        let (session, batch_id, open) = inner
            .state
            .find_item(item_id)
            .ok_or_else(|| ApiError::NotFound(format!("unknown item `{item_id}`")))?;
        if key.as_ref().is_some_and(|k| inner.state.applied_keys.contains_key(k)) {
            let session = &inner.state.sessions[&session];
            let batch = session.batch_by_id(&batch_id).expect("found above");
            return Ok(item_view(session, &batch_id, batch.item(item_id).expect("found above")));
        }
        if !open {
            return Err(ApiError::Conflict {
                code: "BatchClosed",
                message: format!("batch `{batch_id}` is closed"),
            });
        }
        let session = inner.state.sessions.get_mut(&session).expect("found above");
        session.record_verdict(item_id, req.passed, req.feedback)?;
        let view = item_view(session, &batch_id, session.batch.item(item_id).expect("just verdicted"));
        if let Some(key) = key {
            inner.state.applied_keys.insert(key, batch_id);
        }
        Self::persist(inner)?;
        Ok(view)
    }

    pub fn progress(&self, batch_id: &str) -> Result<ProgressView, ApiError> {
        let inner = self.inner.lock().unwrap();
        inner
            .state
            .session_for_batch(batch_id)
            .and_then(|s| progress_of(s, batch_id))
            .ok_or_else(|| ApiError::NotFound(format!("unknown batch `{batch_id}`")))
    }

    /// Closes the batch's round. Repeating the call for a closed batch
    /// returns the original report without touching state.
    pub fn advance_round(&self, batch_id: &str) -> Result<AdvanceReport, ApiError> {
        let mut guard = self.inner.lock().unwrap();
        let inner = &mut *guard;
        if let Some(report) = inner.state.reports.get(batch_id) {
            return Ok(report.clone());
        }
        let label = inner
            .state
            .sessions
            .values()
            .find(|s| s.batch.batch_id == batch_id)
            .map(|s| s.state.label)
            .ok_or_else(|| ApiError::NotFound(format!("unknown batch `{batch_id}`")))?;
        let session = inner.state.sessions.get_mut(&label).expect("label found above");
        let report = session.advance(&mut inner.pool, &self.gateway)?;
        inner.state.reports.insert(batch_id.to_string(), report.clone());
        inner.state.transitions += 1;
        Self::persist(inner)?;
        Ok(report)
    }

    pub fn transitions(&self) -> u64 {
        self.inner.lock().unwrap().state.transitions
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn list_batches(State(svc): State<ReviewService>) -> Result<Json<Vec<ProgressView>>, ApiError> {
    blocking(move || Ok(svc.current_batches())).await.map(Json)
}

async fn pending(
    State(svc): State<ReviewService>,
    Path(batch_id): Path<String>,
) -> Result<Json<Vec<ReviewItemView>>, ApiError> {
    blocking(move || svc.list_pending(&batch_id)).await.map(Json)
}

async fn verdict(
    State(svc): State<ReviewService>,
    Path(item_id): Path<String>,
    Json(req): Json<VerdictRequest>,
) -> Result<Json<ReviewItemView>, ApiError> {
    blocking(move || svc.submit_verdict(&item_id, req)).await.map(Json)
}

async fn progress(
    State(svc): State<ReviewService>,
    Path(batch_id): Path<String>,
) -> Result<Json<ProgressView>, ApiError> {
    blocking(move || svc.progress(&batch_id)).await.map(Json)
}

async fn advance(
    State(svc): State<ReviewService>,
    Path(batch_id): Path<String>,
) -> Result<Json<AdvanceReport>, ApiError> {
    blocking(move || svc.advance_round(&batch_id)).await.map(Json)
}

pub fn router(service: ReviewService) -> Router {
    Router::new()
        .route("/batches", get(list_batches))
        .route("/batches/{batch_id}/pending", get(pending))
        .route("/batches/{batch_id}/progress", get(progress))
        .route("/batches/{batch_id}/advance", post(advance))
        .route("/items/{item_id}/verdict", post(verdict))
        .with_state(service)
}
