use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;

use eigenflow::decomposition::{BlockStructure, LabelVector, TouchList};
use eigenflow::session::{Progress, Session};
use eigenflow::Error;

/// Server state: one session, mutations serialized by the write lock.
pub struct AppState {
    session: RwLock<Session>,
    path: Option<PathBuf>,
    status: Arc<Mutex<Progress>>,
}

pub type Shared = Arc<AppState>;

impl AppState {
    pub fn new(session: Session, path: Option<PathBuf>) -> Shared {
        Arc::new(AppState {
            session: RwLock::new(session),
            path,
            status: Arc::new(Mutex::new(Progress::new("idle", 1.0))),
        })
    }

    fn set_status(&self, p: Progress) {
        *self.status.lock().expect("status lock") = p;
    }

    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        if let Some(path) = &self.path {
            s.save(path).map_err(ApiError::from)?;
        }
        Ok(())
    }
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/session", get(get_session))
        .route("/curves", get(get_curves))
        .route("/suggestions", get(get_suggestions))
        .route("/status", get(get_status))
        .route("/touch", post(post_touch))
        .route("/extend", post(post_extend))
        .with_state(state)
}

pub async fn serve(
    session: Session,
    path: Option<PathBuf>,
    host: &str,
    port: u16,
) -> anyhow::Result<()> {
    let app = router(AppState::new(session, path));
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

/// JSON error body with an HTTP status.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Touch(t) => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({ "error": e.to_string(), "row": t.row, "pair": [t.a, t.b], "reason": t.reason }),
            },
            Error::InvalidParameter(_)
            | Error::Session(_)
            | Error::ComplexTraces(_)
            | Error::CurveIndex { .. } => ApiError {
                status: StatusCode::BAD_REQUEST,
                body: json!({ "error": e.to_string() }),
            },
            _ => ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                body: json!({ "error": e.to_string() }),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn get_session(State(st): State<Shared>) -> Json<Session> {
    Json(st.session.read().await.clone())
}

async fn get_curves(State(st): State<Shared>) -> Json<eigenflow::session::PlotData> {
    Json(st.session.read().await.plot_data())
}

async fn get_status(State(st): State<Shared>) -> Json<Progress> {
    Json(st.status.lock().expect("status lock").clone())
}

#[derive(Debug, Deserialize)]
pub struct SuggestionQuery {
    gap: Option<f64>,
    window: Option<usize>,
}

async fn get_suggestions(
    State(st): State<Shared>,
    Query(q): Query<SuggestionQuery>,
) -> Result<Json<Vec<eigenflow::crossing::TouchCandidate>>, ApiError> {
    let s = st.session.read().await;
    Ok(Json(s.suggestions(q.gap.unwrap_or(0.2), q.window)?))
}

#[derive(Debug, Deserialize)]
pub struct TouchRequest {
    pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Serialize)]
pub struct LabelsResponse {
    ve: Option<LabelVector>,
    blocks: Option<BlockStructure>,
    touch: TouchList,
    notices: Vec<String>,
}

fn labels(s: &Session) -> LabelsResponse {
    LabelsResponse {
        ve: s.ve.clone(),
        blocks: s.blocks.clone(),
        touch: s.touch.clone(),
        notices: s.notices.clone(),
    }
}

/// Replaces the whole Touch list; 409 names the offending row.
async fn post_touch(
    State(st): State<Shared>,
    Json(req): Json<TouchRequest>,
) -> Result<Json<LabelsResponse>, ApiError> {
    let touch = TouchList::new(req.pairs)?;
    let mut s = st.session.write().await;
    s.apply_touch(touch)?;
    st.persist(&s)?;
    Ok(Json(labels(&s)))
}

#[derive(Debug, Deserialize)]
pub struct ExtendRequest {
    t0: f64,
    tf: f64,
}

/// Recomputes on a larger interval. Progress is published on `/status`
/// while the session stays locked for writing.
async fn post_extend(
    State(st): State<Shared>,
    Json(req): Json<ExtendRequest>,
) -> Result<Json<LabelsResponse>, ApiError> {
    let mut guard = st.session.write().await;
    let mut work = guard.clone();
    let status = st.status.clone();
    st.set_status(Progress::new("queued", 0.0));
    let done = tokio::task::spawn_blocking(move || {
        let report = |p: Progress| *status.lock().expect("status lock") = p;
        work.extend_interval(req.t0, req.tf, &report).map(|_| work)
    })
    .await
    .map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: json!({ "error": e.to_string() }),
    })?;
    match done {
        Ok(next) => {
            *guard = next;
            st.persist(&guard)?;
            st.set_status(Progress::new("idle", 1.0));
            Ok(Json(labels(&guard)))
        }
        Err(e) => {
            st.set_status(Progress::new("failed", 1.0));
            Err(e.into())
        }
    }
}
