//! The `/v1` HTTP API.
//!
//! Every handler calls into [`Pipeline`]; request bodies are parsed by hand
//! so malformed input yields the same `{code, message, details}` envelope as
//! domain errors.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use discourse_core::corpus::{sha256_hex, ElectionPeriod, Leader, SpeechManifest};
use discourse_core::jobs::{JobDescriptor, JobKind, JobParams};
use discourse_core::metrics::Selector;
use discourse_core::pipeline::Pipeline;
use discourse_core::prompting::AnnotationTask;
use discourse_core::review::{Reviewer, ReviewDecision, Verdict};
use discourse_core::store::{IdempotentResponse, SpeechFilter};
use discourse_core::vizdata::{ChartKind, ChartOptions};
use discourse_core::{Error, SCHEMA_VERSION};
use tokio::sync::Mutex as AsyncMutex;

/// Largest accepted request body.
const BODY_LIMIT: usize = 16 * 1024 * 1024;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

#[derive(Clone)]
pub struct AppState {
    pub pipeline: Arc<Pipeline>,
    /// Bearer token every `/v1` call except health must carry. `None`
    /// disables auth.
    pub token: Option<String>,
    key_locks: Arc<Mutex<HashMap<String, Arc<AsyncMutex<()>>>>>,
}

impl AppState {
    pub fn new(pipeline: Arc<Pipeline>, token: Option<String>) -> Self {
        Self { pipeline, token, key_locks: Arc::default() }
    }

    fn key_lock(&self, key: &str) -> Arc<AsyncMutex<()>> {
        let mut locks = self.key_locks.lock().expect("key lock map poisoned");
        locks.entry(key.to_string()).or_default().clone()
    }
}

/// An error rendered as the uniform envelope.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: String,
    message: String,
    details: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.to_string(), message: message.into(), details: Value::Null }
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "validation", message)
    }

    fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "validation" | "schema_version" => StatusCode::BAD_REQUEST,
        "unauthorized" => StatusCode::UNAUTHORIZED,
        "not_found" => StatusCode::NOT_FOUND,
        "conflict" | "finalization_incomplete" => StatusCode::CONFLICT,
        "provider" => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let env = e.envelope();
        Self { status: status_for(&env.code), code: env.code, message: env.message, details: env.details }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "details": self.details });
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("request body: {e}")))
}

fn param<T: DeserializeOwned>(q: &HashMap<String, String>, name: &str) -> ApiResult<Option<T>> {
    q.get(name)
        .map(|v| {
            serde_json::from_value(Value::String(v.clone()))
                .map_err(|e| ApiError::validation(format!("query parameter {name}: {e}")))
        })
        .transpose()
}

fn selector(q: &HashMap<String, String>) -> ApiResult<Selector> {
    match q.get("selector") {
        None => Ok(Selector::All),
        Some(s) => s.parse().map_err(|e| ApiError::from(Error::Metrics(e))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

/// Runs blocking pipeline work off the async executor.
async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Pipeline) -> discourse_core::Result<T> + Send + 'static,
{
    let p = state.pipeline.clone();
    tokio::task::spawn_blocking(move || f(&p))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

pub fn router(state: AppState) -> Router {
    let v1 = Router::new()
        .route("/leaders", get(list_leaders).post(put_leader))
        .route("/reviewers", get(list_reviewers).post(put_reviewer))
        .route("/speeches", get(list_speeches).post(create_speech))
        .route("/speeches/{id}", get(get_speech))
        .route("/speeches/{id}/translate", post(start_translate))
        .route("/speeches/{id}/annotate", post(start_annotate))
        .route("/speeches/{id}/annotations", get(list_annotations))
        .route("/speeches/{id}/reviews/enqueue", post(enqueue))
        .route("/speeches/{id}/review-status", get(review_status))
        .route("/speeches/{id}/finalize", post(finalize))
        .route("/speeches/{id}/validated", get(latest_validated))
        .route("/speeches/{id}/validated/{version}", get(validated_version))
        .route("/reviews", post(submit_review))
        .route("/reviews/queue", get(review_queue))
        .route("/reports/accuracy", get(accuracy))
        .route("/summaries", get(summaries))
        .route("/viz/{kind}", get(viz))
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .layer(middleware::from_fn_with_state(state.clone(), idempotency))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .route("/health", get(health))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint") });

    Router::new().nest("/v1", v1).with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let given = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(token.as_str()) {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

/// Replays the stored response for a repeated `Idempotency-Key`. Requests
/// sharing a key are serialized so a retry never races the original.
async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if req.method() != Method::POST {
        return next.run(req).await;
    }
    let Some(key) = req.headers().get(IDEMPOTENCY_HEADER).cloned() else {
        return next.run(req).await;
    };
    let Ok(key) = key.to_str().map(str::to_string) else {
        return ApiError::validation("Idempotency-Key must be ASCII").into_response();
    };
    if key.is_empty() || key.len() > 255 {
        return ApiError::validation("Idempotency-Key must be 1 to 255 characters").into_response();
    }
    let (parts, body) = req.into_parts();
    let Ok(body) = to_bytes(body, BODY_LIMIT).await else {
        return ApiError::validation("request body too large").into_response();
    };
    let target = parts.uri.path_and_query().map_or(parts.uri.path(), |p| p.as_str());
    let fingerprint = sha256_hex(&format!("{}\n{}\n{}", parts.method, target, String::from_utf8_lossy(&body)));

    let lock = state.key_lock(&key);
    let _guard = lock.lock().await;
    if let Some(prior) = state.pipeline.store().idempotent_response(&key) {
        if prior.request_fingerprint != fingerprint {
            return ApiError::new(
                StatusCode::CONFLICT,
                "conflict",
                format!("Idempotency-Key '{key}' was already used for a different request"),
            )
            .into_response();
        }
        let status = StatusCode::from_u16(prior.status).unwrap_or(StatusCode::OK);
        let mut resp = (status, Json(prior.body)).into_response();
        resp.headers_mut().insert("idempotent-replay", HeaderValue::from_static("true"));
        return resp;
    }

    let resp = next.run(Request::from_parts(parts, Body::from(body))).await;
    if resp.status().is_server_error() {
        return resp;
    }
    let (parts, body) = resp.into_parts();
    let Ok(bytes) = to_bytes(body, usize::MAX).await else {
        return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "response body unreadable").into_response();
    };
    if let Ok(value) = serde_json::from_slice::<Value>(&bytes) {
        let record = IdempotentResponse { key, request_fingerprint: fingerprint, status: parts.status.as_u16(), body: value };
        if let Err(e) = state.pipeline.store().put_idempotent_response(record) {
            tracing::warn!(error = %e, "could not record idempotent response");
        }
    }
    Response::from_parts(parts, Body::from(bytes))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "schema_version": SCHEMA_VERSION }))
}

// Registries.

async fn list_leaders(State(s): State<AppState>) -> Json<Value> {
    Json(to_json(&s.pipeline.store().leaders()))
}

async fn put_leader(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let leader: Leader = parse_body(&body)?;
    let out = to_json(&leader);
    blocking(&s, move |p| p.store().put_leader(leader)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

async fn list_reviewers(State(s): State<AppState>) -> Json<Value> {
    Json(to_json(&s.pipeline.store().reviewers()))
}

async fn put_reviewer(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let reviewer: Reviewer = parse_body(&body)?;
    let out = to_json(&reviewer);
    blocking(&s, move |p| p.store().put_reviewer(reviewer)).await?;
    Ok((StatusCode::CREATED, Json(out)))
}

// Speeches.

#[derive(Deserialize)]
struct CreateSpeech {
    #[serde(flatten)]
    manifest: SpeechManifest,
    text: String,
}

async fn create_speech(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: CreateSpeech = parse_body(&body)?;
    let speech = blocking(&s, move |p| p.ingest_speech(req.manifest, &req.text)).await?;
    let mut out = to_json(&speech);
    out["advisories"] = json!(speech.advisories());
    Ok((StatusCode::CREATED, Json(out)))
}

async fn list_speeches(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let filter = SpeechFilter {
        leader: q.get("leader").cloned(),
        period: param::<ElectionPeriod>(&q, "period")?,
        from: param(&q, "from")?,
        to: param(&q, "to")?,
    };
    let items: Vec<Value> = s
        .pipeline
        .store()
        .list_speeches(&filter)
        .into_iter()
        .map(|sp| {
            let mut m = to_json(&sp.manifest());
            m["paragraphs"] = json!(sp.paragraphs.len());
            m["total_words"] = json!(sp.total_words());
            m["translated"] = json!(sp.is_translated());
            m["latest_version"] = json!(s.pipeline.store().validated_versions(&sp.id).last());
            m
        })
        .collect();
    Ok(Json(Value::Array(items)))
}

async fn get_speech(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let speech = s.pipeline.store().get_speech(&id)?;
    let mut out = to_json(&speech);
    out["advisories"] = json!(speech.advisories());
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct TranslateRequest {
    provider: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotateRequest {
    tasks: Vec<AnnotationTask>,
    #[serde(default)]
    provider: Option<String>,
}

/// Registers a job and runs it in the background; the caller polls
/// `/v1/jobs/{id}`.
fn spawn_job(s: &AppState, kind: JobKind, id: &str, params: JobParams) -> ApiResult<(StatusCode, Json<Value>)> {
    let job: JobDescriptor = s.pipeline.create_job(kind, id, params)?;
    let p = s.pipeline.clone();
    let job_id = job.job_id.clone();
    tokio::task::spawn_blocking(move || {
        if let Err(e) = p.run_job(&job_id) {
            tracing::error!(job = %job_id, error = %e, "job could not be run");
        }
    });
    Ok((StatusCode::ACCEPTED, Json(to_json(&job))))
}

async fn start_translate(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: TranslateRequest = if body.is_empty() { TranslateRequest::default() } else { parse_body(&body)? };
    let provider = req.provider.unwrap_or_else(|| "identity".into());
    spawn_job(&s, JobKind::Translate, &id, JobParams { provider: Some(provider), tasks: vec![] })
}

async fn start_annotate(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: AnnotateRequest = parse_body(&body)?;
    let provider = req.provider.unwrap_or_else(|| "stub".into());
    spawn_job(&s, JobKind::Annotate, &id, JobParams { provider: Some(provider), tasks: req.tasks })
}

async fn list_annotations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let task = param::<AnnotationTask>(&q, "task")?;
    let items = s.pipeline.annotations(&id, task)?;
    let out: Vec<Value> = items
        .iter()
        .map(|a| {
            let mut v = to_json(a);
            if let Ok(c) = s.pipeline.category_of(&a.value) {
                v["machine_category"] = json!(c);
            }
            v
        })
        .collect();
    Ok(Json(Value::Array(out)))
}

// Review.

async fn enqueue(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let added = blocking(&s, move |p| p.enqueue(&id)).await?;
    Ok(Json(json!({ "added": added })))
}

async fn review_status(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(to_json(&s.pipeline.review_status(&id)?)))
}

async fn review_queue(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let reviewer = q.get("reviewer").ok_or_else(|| ApiError::validation("query parameter reviewer is required"))?;
    let items = s.pipeline.review_queue(reviewer, q.get("speech").map(String::as_str))?;
    Ok(Json(to_json(&items)))
}

/// A decision as posted; `submitted_at` defaults to the server clock.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionRequest {
    #[serde(default)]
    schema_version: Option<u32>,
    speech_id: String,
    paragraph_index: usize,
    task: AnnotationTask,
    reviewer_id: String,
    verdict: Verdict,
    #[serde(default)]
    submitted_at: Option<DateTime<Utc>>,
    #[serde(default)]
    corrected_value: Option<Value>,
}

async fn submit_review(State(s): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let req: DecisionRequest = parse_body(&body)?;
    let version = req.schema_version.unwrap_or(SCHEMA_VERSION);
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { found: version, expected: SCHEMA_VERSION, path: "request body".into() }.into());
    }
    let decision = ReviewDecision {
        schema_version: version,
        speech_id: req.speech_id,
        paragraph_index: req.paragraph_index,
        task: req.task,
        reviewer_id: req.reviewer_id,
        verdict: req.verdict,
        submitted_at: req.submitted_at.unwrap_or_else(|| s.pipeline.clock().now()),
        corrected_value: req.corrected_value.filter(|v| !v.is_null()),
    };
    let echo = to_json(&decision);
    let outcome = blocking(&s, move |p| p.submit_decision(decision)).await?;
    let status = if outcome.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    let mut out = to_json(&outcome);
    out["decision"] = echo;
    Ok((status, Json(out)))
}

async fn finalize(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    let set = blocking(&s, move |p| p.finalize(&id)).await?;
    Ok((StatusCode::CREATED, Json(to_json(&set))))
}

async fn latest_validated(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    s.pipeline.store().get_speech(&id)?;
    let set = s
        .pipeline
        .store()
        .latest_validated(&id)
        .ok_or_else(|| Error::not_found("validated set", id.clone()))?;
    Ok(Json(to_json(&set)))
}

async fn validated_version(State(s): State<AppState>, Path((id, version)): Path<(String, String)>) -> ApiResult<Json<Value>> {
    s.pipeline.store().get_speech(&id)?;
    let n: u32 = version
        .trim_start_matches('v')
        .parse()
        .map_err(|_| ApiError::validation(format!("version '{version}' is not a number")))?;
    let set = s
        .pipeline
        .store()
        .validated_version(&id, n)
        .ok_or_else(|| Error::not_found("validated set", format!("{id}@v{n}")))?;
    Ok(Json(to_json(&set)))
}

// Reports.

async fn accuracy(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Response> {
    let sel = selector(&q)?;
    let report = s.pipeline.accuracy(&sel)?;
    match q.get("format").map(String::as_str).unwrap_or("json") {
        "json" => Ok(Json(to_json(&report)).into_response()),
        "csv" => {
            let mut headers = HeaderMap::new();
            headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("text/csv; charset=utf-8"));
            Ok((headers, report.to_csv()).into_response())
        }
        other => Err(ApiError::validation(format!("format must be json or csv, got '{other}'"))),
    }
}

async fn summaries(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let sel = selector(&q)?;
    Ok(Json(to_json(&s.pipeline.summary(&sel)?)))
}

async fn viz(
    State(s): State<AppState>,
    Path(kind): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let kind: ChartKind = kind.parse().map_err(|e| ApiError::from(Error::Viz(e)))?;
    let sel = selector(&q)?;
    let defaults = ChartOptions::default();
    let options = ChartOptions {
        topic_scope: param(&q, "topic_scope")?.unwrap_or(defaults.topic_scope),
        intensity_weighting: param(&q, "intensity_weighting")?.unwrap_or(defaults.intensity_weighting),
    };
    Ok(Json(to_json(&s.pipeline.chart(kind, &sel, options)?)))
}

// Jobs.

async fn list_jobs(State(s): State<AppState>, Query(q): Query<HashMap<String, String>>) -> ApiResult<Json<Value>> {
    let speech = q.get("speech");
    let mut jobs: Vec<JobDescriptor> =
        s.pipeline.store().jobs().into_iter().filter(|j| speech.is_none_or(|id| &j.speech_id == id)).collect();
    jobs.sort_by(|a, b| a.job_id.cmp(&b.job_id));
    Ok(Json(to_json(&jobs)))
}

async fn get_job(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(to_json(&s.pipeline.store().get_job(&id)?)))
}
