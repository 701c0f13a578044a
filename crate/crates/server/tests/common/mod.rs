#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use discourse_core::clock::FixedClock;
use discourse_core::config::Config;
use discourse_core::pipeline::{Pipeline, Providers};
use discourse_core::prompting::{AnnotationTask, PromptConfig};
use discourse_core::store::{SpeechFilter, Store};
use discourse_server::AppState;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const TOKEN: &str = "test-token";
pub const NOW: &str = "2023-06-30T12:00:00Z";

pub fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    repo().join("fixtures")
}

pub fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// The TOML used by both the CLI and in-process pipelines.
pub fn config_toml(store: &Path) -> String {
    format!(
        "[store]\npath = {:?}\n\n[prompts]\ndir = {:?}\n\n[providers.stub]\nscript = {:?}\n\n[clock]\nfixed = \"{NOW}\"\n",
        store,
        repo().join("prompts"),
        fixtures().join("stub_responses.jsonl"),
    )
}

fn config() -> Config {
    let mut config = Config::from_toml(&config_toml(Path::new("unused"))).unwrap();
    config.jobs.retry = discourse_core::provider::RetryPolicy::immediate(1);
    config
}

pub fn pipeline_on(store: Store) -> Arc<Pipeline> {
    let config = config();
    let prompts = PromptConfig::load_dir(&repo().join("prompts")).unwrap();
    let providers = Providers::from_config(&config, &prompts.taxonomy).unwrap();
    let clock = Arc::new(FixedClock(NOW.parse().unwrap()));
    Arc::new(Pipeline::new(Arc::new(store), config, prompts, providers, clock))
}

pub fn pipeline() -> Arc<Pipeline> {
    pipeline_on(Store::in_memory())
}

pub fn speech_ids(p: &Pipeline) -> Vec<String> {
    p.store().list_speeches(&SpeechFilter::default()).into_iter().map(|s| s.id).collect()
}

pub fn annotated(p: &Pipeline) {
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    for id in speech_ids(p) {
        p.translate(&id, "identity").unwrap();
        p.annotate(&id, &AnnotationTask::ALL, "stub").unwrap();
    }
}

pub fn finalized(p: &Pipeline) {
    annotated(p);
    p.apply_decisions_file(&fixtures().join("decisions.jsonl")).unwrap();
    for id in speech_ids(p) {
        p.finalize(&id).unwrap();
    }
}

pub fn app(p: Arc<Pipeline>) -> Router {
    discourse_server::app(AppState::new(p, Some(TOKEN.into())), None)
}

pub struct Reply {
    pub status: StatusCode,
    pub headers: axum::http::HeaderMap,
    pub text: String,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_str(&self.text).unwrap_or_else(|e| panic!("{e}: {}", self.text))
    }
}

pub async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>, headers: &[(&str, &str)]) -> Reply {
    let mut req = Request::builder().method(method).uri(uri);
    if !headers.iter().any(|(k, _)| k.eq_ignore_ascii_case("authorization")) {
        req = req.header("authorization", format!("Bearer {TOKEN}"));
    }
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let req = match body {
        Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    Reply { status, headers, text: String::from_utf8(bytes.to_vec()).unwrap() }
}

pub async fn get(app: &Router, uri: &str) -> Reply {
    send(app, "GET", uri, None, &[]).await
}

pub async fn post(app: &Router, uri: &str, body: Value) -> Reply {
    send(app, "POST", uri, Some(body), &[]).await
}

pub fn validate_chart(kind: &str, chart: &Value) {
    let schema = read_json(&repo().join("schemas").join(format!("{kind}.json")));
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(chart).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{kind}: {errors:?}");
}
