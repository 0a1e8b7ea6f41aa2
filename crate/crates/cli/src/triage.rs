//! Triage HTTP service over an [`ExpansionState`].
//!
//! | route          | body / reply                                                   |
//! |----------------|----------------------------------------------------------------|
//! | `GET /queue`   | `{iteration, state, items: [QueueItem]}` (unlabeled entries)   |
//! | `POST /labels` | `{case_id, decision: "confirm_flaky"\|"reject", root_causes?, reviewer?}` |
//! | `POST /iterate`| applies staged labels, re-ranks, replies with `/state`         |
//! | `GET /state`   | [`StateView`]                                                  |
//!
//! `state` is `"reviewing"` or `"fixed_point"`. Errors reply
//! `{error, iteration}` with 400 (malformed body, unknown case) or 409 (case
//! already labeled). Mutations go through one writer task; reads are served
//! from the last published view.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use qflake_core::codectx::diff_changed_files;
use qflake_core::corpus::{CaseId, Snapshot};
use qflake_core::promptkit::{build_report_text, ReportLevel};
use qflake_core::simsearch::{EmbeddingIndex, ExpansionState, SimError, TriageLabel};
use qflake_core::RootCause;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot, watch};
use tower_http::services::ServeDir;
use tracing::{info, warn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Reviewing,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub case_id: CaseId,
    pub title: String,
    pub score: f64,
    pub nearest_seed_id: CaseId,
    pub report_text: String,
    pub diff: String,
    pub suggested_root_causes: Vec<RootCause>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueView {
    pub iteration: u32,
    pub state: Phase,
    pub items: Vec<QueueItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub iteration: u32,
    pub state: Phase,
    /// Seeds plus every confirmed case.
    pub anchors: Vec<CaseId>,
    pub seed_count: usize,
    pub confirmed_per_iteration: Vec<usize>,
    pub rejected_count: usize,
    pub staged_count: usize,
    pub open_count: usize,
    pub total_flaky: usize,
    pub growth_percent: f64,
}

#[derive(Debug, Deserialize)]
struct LabelRequest {
    case_id: String,
    #[serde(flatten)]
    label: TriageLabel,
    #[serde(default)]
    reviewer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAccepted {
    pub iteration: u32,
    pub case_id: CaseId,
    pub staged_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    pub iteration: u32,
}

#[derive(Debug)]
struct Rejection(StatusCode, ApiError);

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

/// Everything the writer needs besides the state itself.
pub struct TriageContext {
    pub index: EmbeddingIndex,
    pub snapshot: Arc<Snapshot>,
    /// Written after every mutation when set.
    pub state_path: Option<PathBuf>,
    pub reviewer: Option<String>,
}

struct Published {
    queue: QueueView,
    state: StateView,
}

enum Command {
    Label {
        case_id: CaseId,
        label: TriageLabel,
        reviewer: Option<String>,
        reply: oneshot::Sender<Result<LabelAccepted, Rejection>>,
    },
    Iterate {
        reply: oneshot::Sender<Result<StateView, Rejection>>,
    },
}

#[derive(Clone)]
pub struct TriageHandle {
    commands: mpsc::Sender<Command>,
    view: watch::Receiver<Arc<Published>>,
}

impl TriageHandle {
    pub fn state(&self) -> StateView {
        self.view.borrow().state.clone()
    }

    pub fn queue(&self) -> QueueView {
        self.view.borrow().queue.clone()
    }
}

fn phase(state: &ExpansionState) -> Phase {
    if state.is_fixed_point() {
        Phase::FixedPoint
    } else {
        Phase::Reviewing
    }
}

fn state_view(state: &ExpansionState) -> StateView {
    StateView {
        iteration: state.iteration,
        state: phase(state),
        anchors: state.anchors().into_iter().collect(),
        seed_count: state.seed_ids.len(),
        confirmed_per_iteration: state.confirmed_new_ids.iter().map(Vec::len).collect(),
        rejected_count: state.rejected_ids.len(),
        staged_count: state.staged.len(),
        open_count: state.open_queue().count(),
        total_flaky: state.total_flaky(),
        growth_percent: state.growth_percent(),
    }
}

/// Unified diff of every file touched by the case's fix, or empty.
pub fn render_diff(id: &CaseId, snapshot: &Snapshot) -> String {
    let Some(case) = snapshot.artifact(id) else {
        return String::new();
    };
    let Ok(changes) = diff_changed_files(case, snapshot) else {
        return String::new();
    };
    let mut out = String::new();
    for c in changes {
        let before = c.before.as_deref().unwrap_or("");
        let after = c.after.as_deref().unwrap_or("");
        let diff = similar::TextDiff::from_lines(before, after);
        let a = format!("a/{}", c.path);
        let b = format!("b/{}", c.path);
        out.push_str(&diff.unified_diff().context_radius(3).header(&a, &b).to_string());
    }
    out
}

struct Writer {
    state: ExpansionState,
    ctx: TriageContext,
    corpus: BTreeSet<CaseId>,
    rendered: HashMap<CaseId, (String, String, String)>,
    publish: watch::Sender<Arc<Published>>,
}

impl Writer {
    fn rendered(&mut self, id: &CaseId) -> (String, String, String) {
        let snapshot = &self.ctx.snapshot;
        self.rendered
            .entry(id.clone())
            .or_insert_with(|| match snapshot.artifact(id) {
                Some(a) => (
                    a.title.clone(),
                    build_report_text(a, ReportLevel::Full).unwrap_or_else(|_| format!("Title: {}", a.title)),
                    render_diff(id, snapshot),
                ),
                None => Default::default(),
            })
            .clone()
    }

    fn published(&mut self) -> Published {
        let open: Vec<_> = self.state.open_queue().cloned().collect();
        let items = open
            .into_iter()
            .map(|c| {
                let (title, report_text, diff) = self.rendered(&c.case_id);
                QueueItem {
                    case_id: c.case_id,
                    title,
                    score: c.score,
                    nearest_seed_id: c.nearest_seed_id,
                    report_text,
                    diff,
                    suggested_root_causes: Vec::new(),
                }
            })
            .collect();
        Published {
            queue: QueueView {
                iteration: self.state.iteration,
                state: phase(&self.state),
                items,
            },
            state: state_view(&self.state),
        }
    }

    fn reject(&self, status: StatusCode, error: impl Into<String>) -> Rejection {
        Rejection(
            status,
            ApiError {
                error: error.into(),
                iteration: self.state.iteration,
            },
        )
    }

    /// Commits `next` after persisting it; the in-memory state is untouched
    /// when the write fails.
    fn commit(&mut self, next: ExpansionState) -> Result<(), Rejection> {
        if let Some(path) = &self.ctx.state_path {
            if let Err(e) = next.save(path) {
                warn!(error = %e, "could not persist expansion state");
                return Err(self.reject(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting state: {e}")));
            }
        }
        self.state = next;
        let view = Arc::new(self.published());
        self.publish.send_replace(view);
        Ok(())
    }

    fn label(&mut self, id: CaseId, label: TriageLabel, reviewer: Option<String>) -> Result<LabelAccepted, Rejection> {
        let mut next = self.state.clone();
        match next.stage(&id, label, reviewer.or_else(|| self.ctx.reviewer.clone())) {
            Ok(()) => {}
            Err(e @ SimError::AlreadyLabeled(_)) => return Err(self.reject(StatusCode::CONFLICT, e.to_string())),
            Err(e) => return Err(self.reject(StatusCode::BAD_REQUEST, e.to_string())),
        }
        self.commit(next)?;
        Ok(LabelAccepted {
            iteration: self.state.iteration,
            case_id: id,
            staged_count: self.state.staged.len(),
        })
    }

    fn iterate(&mut self) -> Result<StateView, Rejection> {
        let mut next = self.state.clone();
        next.advance(&self.corpus, &self.ctx.index)
            .map_err(|e| self.reject(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        self.commit(next)?;
        info!(iteration = self.state.iteration, confirmed = ?self.state.confirmed_new_ids.last().map(Vec::len), "advanced expansion");
        Ok(state_view(&self.state))
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        while let Some(cmd) = rx.recv().await {
            match cmd {
                Command::Label {
                    case_id,
                    label,
                    reviewer,
                    reply,
                } => {
                    let _ = reply.send(self.label(case_id, label, reviewer));
                }
                Command::Iterate { reply } => {
                    let _ = reply.send(self.iterate());
                }
            }
        }
    }
}

/// Starts the writer task. The queue is ranked immediately when the state
/// has none yet.
pub fn spawn(mut state: ExpansionState, ctx: TriageContext) -> Result<TriageHandle, SimError> {
    let corpus: BTreeSet<CaseId> = ctx.index.vectors.keys().cloned().collect();
    if state.pending_queue.is_empty() && state.iteration == 0 {
        state.refresh(&corpus, &ctx.index)?;
    }
    let (publish, view) = watch::channel(Arc::new(Published {
        queue: QueueView {
            iteration: 0,
            state: Phase::Reviewing,
            items: Vec::new(),
        },
        state: state_view(&state),
    }));
    let mut writer = Writer {
        state,
        ctx,
        corpus,
        rendered: HashMap::new(),
        publish,
    };
    let first = Arc::new(writer.published());
    writer.publish.send_replace(first);
    let (tx, rx) = mpsc::channel(64);
    tokio::spawn(writer.run(rx));
    Ok(TriageHandle { commands: tx, view })
}

fn unavailable() -> Rejection {
    Rejection(
        StatusCode::SERVICE_UNAVAILABLE,
        ApiError {
            error: "triage writer stopped".into(),
            iteration: 0,
        },
    )
}

async fn get_queue(State(h): State<TriageHandle>) -> Json<QueueView> {
    Json(h.queue())
}

async fn get_state(State(h): State<TriageHandle>) -> Json<StateView> {
    Json(h.state())
}

async fn post_labels(State(h): State<TriageHandle>, body: String) -> Result<Json<LabelAccepted>, Rejection> {
    let iteration = h.state().iteration;
    let bad = |error: String| Rejection(StatusCode::BAD_REQUEST, ApiError { error, iteration });
    let req: LabelRequest = serde_json::from_str(&body).map_err(|e| bad(format!("malformed label: {e}")))?;
    let case_id: CaseId = req
        .case_id
        .parse()
        .map_err(|_| bad(format!("`{}` is not a case id", req.case_id)))?;
    let (reply, rx) = oneshot::channel();
    h.commands
        .send(Command::Label {
            case_id,
            label: req.label,
            reviewer: req.reviewer,
            reply,
        })
        .await
        .map_err(|_| unavailable())?;
    rx.await.map_err(|_| unavailable())?.map(Json)
}

async fn post_iterate(State(h): State<TriageHandle>) -> Result<Json<StateView>, Rejection> {
    let (reply, rx) = oneshot::channel();
    h.commands
        .send(Command::Iterate { reply })
        .await
        .map_err(|_| unavailable())?;
    rx.await.map_err(|_| unavailable())?.map(Json)
}

pub fn router(handle: TriageHandle, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/queue", get(get_queue))
        .route("/labels", post(post_labels))
        .route("/iterate", post(post_iterate))
        .route("/state", get(get_state))
        .with_state(handle);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
