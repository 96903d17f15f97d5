//! HTTP API over a directory of analysis runs.
//!
//! Reads are concurrent. Triage and exclusion edits take the run's write
//! lock, check the caller's version token and persist before replying.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, put};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use ntl_core::deviation::{DailyVoltageStats, Indicator, Source};
use ntl_core::heatmap::{export_heatmap, DEFAULT_CLAMP};
use ntl_core::ranking::{export_candidates, CandidateRecord, ExclusionWindow, Pattern, Triage};
use ntl_core::store::{list_runs, AnalysisStore, Annotation, MANIFEST};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::RwLock;

pub const BIND_ENV: &str = "NTL_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

struct Run {
    dir: PathBuf,
    store: RwLock<AnalysisStore>,
}

pub struct AppState {
    root: PathBuf,
    runs: Mutex<HashMap<String, Arc<Run>>>,
}

impl AppState {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        AppState {
            root: root.into(),
            runs: Mutex::new(HashMap::new()),
        }
    }

    fn run(&self, id: &str) -> Result<Arc<Run>, ApiError> {
        if let Some(r) = self.runs.lock().expect("run cache").get(id) {
            return Ok(r.clone());
        }
        let valid = !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        let dir = self.root.join(id);
        if !valid || !dir.join(MANIFEST).is_file() {
            return Err(ApiError::not_found(format!("unknown run `{id}`")));
        }
        let store = AnalysisStore::load(&dir)?;
        let mut cache = self.runs.lock().expect("run cache");
        Ok(cache
            .entry(id.to_string())
            .or_insert_with(|| {
                Arc::new(Run {
                    dir,
                    store: RwLock::new(store),
                })
            })
            .clone())
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    extra: Option<Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
            extra: None,
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<ntl_core::Error> for ApiError {
    fn from(e: ntl_core::Error) -> Self {
        use ntl_core::Error as E;
        match e {
            E::UnknownMeter(_) | E::NotFound(_) => ApiError::not_found(e.to_string()),
            E::Conflict { current, .. } => ApiError {
                status: StatusCode::CONFLICT,
                message: e.to_string(),
                extra: Some(json!({ "current_version": current })),
            },
            E::InvalidArgument(_) | E::Parse(_) => ApiError::unprocessable(e.to_string()),
            other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(Value::Object(extra)) = self.extra {
            body.as_object_mut().expect("object").extend(extra);
        }
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/runs", get(get_runs))
        .route("/runs/{id}/heatmap", get(get_heatmap))
        .route("/runs/{id}/candidates", get(get_candidates))
        .route("/runs/{id}/meters/{meter_id}/series", get(get_series))
        .route("/runs/{id}/candidates/{meter_id}/triage", put(put_triage))
        .route("/runs/{id}/exclusions", get(get_exclusions).put(put_exclusions))
        .route("/runs/{id}/export/candidates.csv", get(get_export))
        .with_state(state)
}

/// Serves `root` on `addr` until the process ends.
pub async fn serve(root: PathBuf, addr: SocketAddr) -> std::io::Result<()> {
    serve_on(root, tokio::net::TcpListener::bind(addr).await?).await
}

pub async fn serve_on(root: PathBuf, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(Arc::new(AppState::new(root)))).await
}

pub fn bind_address() -> Result<SocketAddr, String> {
    let raw = std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_string());
    raw.parse().map_err(|e| format!("bad {BIND_ENV} `{raw}`: {e}"))
}

async fn get_runs(State(state): State<Arc<AppState>>) -> ApiResult<Json<Value>> {
    let root: PathBuf = state.root.clone();
    let runs = list_runs(&root)?;
    Ok(Json(json!({ "runs": runs })))
}

#[derive(Deserialize)]
struct HeatmapQuery {
    indicator: Option<String>,
    top: Option<usize>,
    format: Option<String>,
}

async fn get_heatmap(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HeatmapQuery>,
) -> ApiResult<Response> {
    let indicator: Indicator = q
        .indicator
        .as_deref()
        .unwrap_or("dv_min")
        .parse()
        .map_err(|e: ntl_core::Error| ApiError::unprocessable(e.to_string()))?;
    if q.top == Some(0) {
        return Err(ApiError::unprocessable("top must be at least 1"));
    }
    let run = state.run(&id)?;
    let store = run.store.read().await;
    let doc = export_heatmap(&store.matrix, &store.network, indicator, q.top, &store.exclusions, DEFAULT_CLAMP)?;
    Ok(match q.format.as_deref() {
        Some("svg") => ([(header::CONTENT_TYPE, "image/svg+xml")], doc.to_svg()).into_response(),
        None | Some("json") => Json(doc).into_response(),
        Some(other) => return Err(ApiError::unprocessable(format!("unknown format `{other}`"))),
    })
}

#[derive(Serialize)]
struct CandidateView {
    #[serde(flatten)]
    record: CandidateRecord,
    version: u64,
    updated_at: Option<DateTime<Utc>>,
}

#[derive(Serialize)]
struct CandidateList {
    run_id: String,
    exclusions: Vec<ExclusionWindow>,
    exclusions_version: u64,
    ranking_computed_at: DateTime<Utc>,
    loadflow_computed_at: DateTime<Utc>,
    candidates: Vec<CandidateView>,
}

fn candidate_list(store: &AnalysisStore, top: Option<usize>) -> CandidateList {
    let mut records = store.candidates();
    if let Some(k) = top {
        records.truncate(k);
    }
    CandidateList {
        run_id: store.run_id.clone(),
        exclusions: store.exclusions.clone(),
        exclusions_version: store.exclusions_version,
        ranking_computed_at: store.provenance.ranking_computed_at,
        loadflow_computed_at: store.provenance.loadflow_computed_at,
        candidates: records
            .into_iter()
            .map(|r| {
                let a = store.annotations.get(&r.meter_id);
                CandidateView {
                    version: a.map_or(0, |a| a.version),
                    updated_at: a.map(|a| a.updated_at),
                    record: r,
                }
            })
            .collect(),
    }
}

#[derive(Deserialize)]
struct TopQuery {
    top: Option<usize>,
}

async fn get_candidates(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TopQuery>,
) -> ApiResult<Json<CandidateList>> {
    if q.top == Some(0) {
        return Err(ApiError::unprocessable("top must be at least 1"));
    }
    let run = state.run(&id)?;
    let store = run.store.read().await;
    Ok(Json(candidate_list(&store, q.top)))
}

#[derive(Serialize)]
struct SeriesView {
    meter_id: String,
    terminal_id: String,
    rank: Option<usize>,
    pattern: Option<Pattern>,
    days: Vec<NaiveDate>,
    dv_mean: Vec<Option<f64>>,
    dv_min: Vec<Option<f64>>,
    dv_max: Vec<Option<f64>>,
    simulated: Vec<DailyVoltageStats>,
    measured: Vec<DailyVoltageStats>,
}

async fn get_series(
    State(state): State<Arc<AppState>>,
    UrlPath((id, meter_id)): UrlPath<(String, String)>,
) -> ApiResult<Json<SeriesView>> {
    let run = state.run(&id)?;
    let store = run.store.read().await;
    let m = store
        .matrix
        .meter_index(&meter_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown meter `{meter_id}`")))?;
    let ranked = store.ranking.iter().find(|r| r.meter_id == meter_id);
    let stats = |source: Source| {
        store
            .daily_stats
            .iter()
            .filter(|s| s.meter_id == meter_id && s.source == source)
            .cloned()
            .collect()
    };
    Ok(Json(SeriesView {
        terminal_id: store.network.terminals.get(&meter_id).cloned().unwrap_or_default(),
        rank: ranked.map(|r| r.rank),
        pattern: ranked.and_then(|r| r.pattern),
        days: store.matrix.days().to_vec(),
        dv_mean: store.matrix.row(Indicator::Mean, m).to_vec(),
        dv_min: store.matrix.row(Indicator::Min, m).to_vec(),
        dv_max: store.matrix.row(Indicator::Max, m).to_vec(),
        simulated: stats(Source::Simulated),
        measured: stats(Source::Measured),
        meter_id,
    }))
}

/// Version token from `If-Match` (bare or quoted number), if any.
fn if_match(headers: &HeaderMap) -> ApiResult<Option<u64>> {
    let Some(v) = headers.get(header::IF_MATCH) else { return Ok(None) };
    let raw = v
        .to_str()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "unreadable If-Match"))?;
    raw.trim()
        .trim_start_matches("W/")
        .trim_matches('"')
        .parse()
        .map(Some)
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("bad If-Match `{raw}`")))
}

#[derive(Deserialize)]
struct TriageBody {
    status: String,
    #[serde(default)]
    comment: String,
    version: Option<u64>,
}

#[derive(Serialize)]
struct TriageReply {
    meter_id: String,
    #[serde(flatten)]
    annotation: Annotation,
}

async fn put_triage(
    State(state): State<Arc<AppState>>,
    UrlPath((id, meter_id)): UrlPath<(String, String)>,
    headers: HeaderMap,
    Json(body): Json<TriageBody>,
) -> ApiResult<Response> {
    let expected = if_match(&headers)?.or(body.version);
    let run = state.run(&id)?;
    let triage: Triage = body
        .status
        .parse()
        .map_err(|e: ntl_core::Error| ApiError::unprocessable(e.to_string()))?;
    let mut store = run.store.write().await;
    let annotation = store.set_triage(&meter_id, triage, body.comment, expected, Utc::now())?;
    store.persist_annotations(&run.dir)?;
    let etag = format!("\"{}\"", annotation.version);
    Ok(([(header::ETAG, etag)], Json(TriageReply { meter_id, annotation })).into_response())
}

async fn get_exclusions(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let run = state.run(&id)?;
    let store = run.store.read().await;
    let etag = format!("\"{}\"", store.exclusions_version);
    Ok((
        [(header::ETAG, etag)],
        Json(json!({ "version": store.exclusions_version, "windows": store.exclusions })),
    )
        .into_response())
}

/// Accepts `[windows]` or `{"windows": [...], "version": n}`.
fn parse_exclusions(body: Value) -> ApiResult<(Vec<ExclusionWindow>, Option<u64>)> {
    let (windows, version) = match body {
        Value::Array(_) => (body, None),
        Value::Object(mut o) => {
            let version = match o.remove("version") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_u64()
                        .ok_or_else(|| ApiError::unprocessable("version must be a nonnegative integer"))?,
                ),
            };
            (o.remove("windows").unwrap_or(Value::Array(Vec::new())), version)
        }
        _ => return Err(ApiError::unprocessable("expected a list of windows")),
    };
    let windows = serde_json::from_value(windows).map_err(|e| ApiError::unprocessable(format!("bad windows: {e}")))?;
    Ok((windows, version))
}

async fn put_exclusions(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    headers: HeaderMap,
    Json(body): Json<Value>,
) -> ApiResult<Json<CandidateList>> {
    let (windows, body_version) = parse_exclusions(body)?;
    let expected = if_match(&headers)?.or(body_version);
    let run = state.run(&id)?;
    let mut store = run.store.write().await;
    store.set_exclusions(windows, expected, Utc::now())?;
    store.persist_ranking(&run.dir)?;
    store.persist_annotations(&run.dir)?;
    Ok(Json(candidate_list(&store, None)))
}

async fn get_export(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TopQuery>,
) -> ApiResult<Response> {
    let run = state.run(&id)?;
    let store = run.store.read().await;
    let records = match q.top {
        Some(k) => store.top_candidates(k),
        None => store.candidates(),
    };
    Ok((
        [
            (header::CONTENT_TYPE, "text/csv; charset=utf-8".to_string()),
            (
                header::CONTENT_DISPOSITION,
                format!("attachment; filename=\"{}-candidates.csv\"", store.run_id),
            ),
        ],
        export_candidates(&records),
    )
        .into_response())
}
