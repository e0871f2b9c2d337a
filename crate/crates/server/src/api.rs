//! The `/api/v1` HTTP interface over an [`Engine`].

use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sourcebridge::engine::{Engine, EngineError, Mode, Run, RunState};
use sourcebridge::eval::{parse_run_file, MetricsReport};
use sourcebridge::DataTable;
use tokio::sync::Semaphore;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    permits: Arc<Semaphore>,
}

impl AppState {
    /// At most `concurrency` runs execute at once; the rest queue.
    pub fn new(engine: Arc<Engine>, concurrency: usize) -> Self {
        Self {
            engine,
            permits: Arc::new(Semaphore::new(concurrency.max(1))),
        }
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: String,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            kind: kind.to_string(),
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::NotFound(_) => StatusCode::NOT_FOUND,
            EngineError::NotAwaitingChoice { .. }
            | EngineError::NotFinished { .. }
            | EngineError::BaseNotDone { .. }
            | EngineError::Busy(_) => StatusCode::CONFLICT,
            EngineError::UnknownOption { .. } | EngineError::UnknownChoicePoint { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            EngineError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.kind(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, EngineError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

/// Executes `id` in the background until it finishes or pauses.
fn spawn_advance(state: &AppState, id: String) {
    let engine = state.engine.clone();
    let permits = state.permits.clone();
    tokio::spawn(async move {
        let Ok(_permit) = permits.acquire_owned().await else { return };
        let run_id = id.clone();
        match tokio::task::spawn_blocking(move || engine.advance(&id)).await {
            Ok(Ok(run)) => tracing::info!(run = %run.id, state = ?run.state, "run advanced"),
            Ok(Err(e)) => tracing::error!(run = %run_id, error = %e, "run could not advance"),
            Err(e) => tracing::error!(run = %run_id, error = %e, "run task panicked"),
        }
    });
}

#[derive(Debug, Serialize)]
struct ResultSummary {
    columns: Vec<String>,
    rows: usize,
}

/// A run as served: the result table is summarized; `/result` has the rows.
fn run_view(run: &Run) -> Value {
    let mut head = run.clone();
    let result = head.result.take().map(|t| ResultSummary {
        columns: t.column_names(),
        rows: t.rows.len(),
    });
    let mut v = serde_json::to_value(&head).unwrap_or(Value::Null);
    v["result"] = serde_json::to_value(result).unwrap_or(Value::Null);
    v
}

#[derive(Debug, Deserialize)]
struct CreateRun {
    #[serde(default = "default_mode")]
    mode: Mode,
    query: String,
    #[serde(default)]
    knowledge: Option<String>,
}

fn default_mode() -> Mode {
    Mode::Auto
}

async fn create_run(State(s): State<AppState>, Json(req): Json<CreateRun>) -> ApiResult<Response> {
    let engine = s.engine.clone();
    let run = blocking(move || engine.start(req.mode, &req.query, req.knowledge.as_deref())).await?;
    spawn_advance(&s, run.id.clone());
    Ok(created(&run))
}

fn created(run: &Run) -> Response {
    let location = format!("/api/v1/runs/{}", run.id);
    (StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(run_view(run))).into_response()
}

#[derive(Debug, Serialize)]
struct RunListItem {
    id: String,
    mode: Mode,
    query: String,
    state: RunState,
    parent: Option<String>,
    base: Option<String>,
    created_at: String,
    updated_at: String,
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Json<Value>> {
    let engine = s.engine.clone();
    let runs = blocking(move || engine.list()).await?;
    let items: Vec<RunListItem> = runs
        .into_iter()
        .map(|r| RunListItem {
            id: r.id,
            mode: r.mode,
            query: r.query,
            state: r.state,
            parent: r.parent,
            base: r.base,
            created_at: r.created_at.to_rfc3339(),
            updated_at: r.updated_at.to_rfc3339(),
        })
        .collect();
    Ok(Json(json!({ "runs": items })))
}

async fn fetch(s: &AppState, id: String) -> ApiResult<Run> {
    let engine = s.engine.clone();
    blocking(move || engine.get(&id)).await
}

async fn get_run(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(run_view(&fetch(&s, id).await?)))
}

#[derive(Debug, Deserialize)]
struct StepsQuery {
    #[serde(default)]
    since: usize,
}

async fn get_steps(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StepsQuery>,
) -> ApiResult<Json<Value>> {
    let run = fetch(&s, id).await?;
    let steps = run.steps.get(q.since..).unwrap_or_default();
    Ok(Json(json!({
        "run_id": run.id,
        "state": run.state,
        "total": run.steps.len(),
        "steps": steps,
    })))
}

async fn get_choice(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let run = fetch(&s, id).await?;
    Ok(Json(json!({
        "run_id": run.id,
        "state": run.state,
        "choice": run.choice,
        "points": run.choices,
    })))
}

#[derive(Debug, Deserialize)]
struct SubmitChoice {
    /// 1-based option number.
    option: usize,
    /// 0-based choice point being answered. Required to re-choose on a
    /// finished run, which forks it; otherwise it must be the outstanding
    /// point.
    #[serde(default)]
    point: Option<usize>,
}

async fn post_choice(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SubmitChoice>,
) -> ApiResult<Response> {
    let run = fetch(&s, id.clone()).await?;
    let engine = s.engine.clone();
    let conflict = |m: String| ApiError::new(StatusCode::CONFLICT, "state", m);
    if let Some(p) = req.point {
        if run.choices.get(p).and_then(|c| c.selected) == Some(req.option) {
            return Err(conflict(format!("option {} is already selected at choice point {p}", req.option)));
        }
    }
    if run.state.is_terminal() {
        let Some(point) = req.point else {
            return Err(conflict(format!(
                "run is {:?}; name a choice point to re-choose",
                run.state
            )));
        };
        let child = blocking(move || engine.fork(&id, point, req.option)).await?;
        spawn_advance(&s, child.id.clone());
        return Ok((StatusCode::CREATED, Json(run_view(&child))).into_response());
    }
    if let Some(p) = req.point {
        let current = run.choices.len().checked_sub(1);
        if run.state != RunState::AwaitingChoice || Some(p) != current {
            return Err(conflict(format!("choice point {p} is not outstanding")));
        }
    }
    let run = blocking(move || engine.submit_choice(&id, req.option)).await?;
    spawn_advance(&s, run.id.clone());
    Ok(Json(run_view(&run)).into_response())
}

#[derive(Debug, Deserialize)]
struct Followup {
    text: String,
}

async fn post_followup(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<Followup>,
) -> ApiResult<Response> {
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("follow-up text is empty"));
    }
    let engine = s.engine.clone();
    let run = blocking(move || engine.followup(&id, &req.text)).await?;
    spawn_advance(&s, run.id.clone());
    Ok(created(&run))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ResultFormat {
    Json,
    Csv,
    Tsv,
}

#[derive(Debug, Deserialize)]
struct ResultQuery {
    format: Option<ResultFormat>,
}

fn negotiate(headers: &HeaderMap) -> ResultFormat {
    let accept = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .unwrap_or_default()
        .to_ascii_lowercase();
    if accept.contains("text/csv") {
        ResultFormat::Csv
    } else if accept.contains("text/tab-separated-values") {
        ResultFormat::Tsv
    } else {
        ResultFormat::Json
    }
}

pub fn table_json(t: &DataTable) -> Value {
    json!({
        "columns": t.columns.iter().map(|c| json!({ "name": c.name, "type": c.ty.to_string() })).collect::<Vec<_>>(),
        "records": t.to_records(),
    })
}

async fn get_result(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ResultQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let run = fetch(&s, id).await?;
    let Some(table) = run.result.as_ref().filter(|_| run.state == RunState::Done) else {
        let message = match &run.error {
            Some(e) => format!("run failed: {}", e.message),
            None => format!("run is {:?}; no result yet", run.state),
        };
        return Err(ApiError::new(StatusCode::CONFLICT, "state", message));
    };
    let format = q.format.unwrap_or_else(|| negotiate(&headers));
    Ok(match format {
        ResultFormat::Json => Json(table_json(table)).into_response(),
        ResultFormat::Csv => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], table.to_delimited(b',')).into_response(),
        ResultFormat::Tsv => (
            [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")],
            table.to_delimited(b'\t'),
        )
            .into_response(),
    })
}

#[derive(Debug, Deserialize)]
struct EvalQuery {
    #[serde(default = "default_k")]
    k: usize,
}

fn default_k() -> usize {
    4
}

async fn post_eval(Query(q): Query<EvalQuery>, body: String) -> ApiResult<Json<MetricsReport>> {
    let unprocessable = |e: sourcebridge::eval::EvalError| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "eval", e.to_string());
    let run = parse_run_file(&body, q.k).map_err(unprocessable)?;
    MetricsReport::compute(&run).map(Json).map_err(unprocessable)
}

async fn health(State(s): State<AppState>) -> Json<Value> {
    let p = s.engine.parts();
    Json(json!({
        "status": "ok",
        "documents": p.index.len(),
        "processes": p.kb.read().len(),
    }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/steps", get(get_steps))
        .route("/runs/{id}/choice", get(get_choice).post(post_choice))
        .route("/runs/{id}/followup", post(post_followup))
        .route("/runs/{id}/result", get(get_result))
        .route("/eval", post(post_eval));
    Router::new().nest("/api/v1", api).fallback(not_found).with_state(state)
}

/// Fails abandoned guided sessions every `every`.
pub fn spawn_expiry(state: &AppState, every: Duration) -> tokio::task::JoinHandle<()> {
    let engine = state.engine.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        loop {
            tick.tick().await;
            let engine = engine.clone();
            match tokio::task::spawn_blocking(move || engine.expire_stale()).await {
                Ok(Ok(0)) => {}
                Ok(Ok(n)) => tracing::info!(expired = n, "guided sessions expired"),
                Ok(Err(e)) => tracing::warn!(error = %e, "session expiry failed"),
                Err(e) => tracing::warn!(error = %e, "session expiry panicked"),
            }
        }
    })
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    state: AppState,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let expiry = spawn_expiry(&state, Duration::from_secs(60));
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    expiry.abort();
    result
}
