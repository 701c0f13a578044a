#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use discourse_core::clock::FixedClock;
use discourse_core::config::Config;
use discourse_core::pipeline::{Pipeline, Providers};
use discourse_core::prompting::{AnnotationTask, LlmProvider, PromptConfig, StubProvider};
use discourse_core::store::{SpeechFilter, Store};

pub mod criteria;

pub fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixtures() -> PathBuf {
    repo().join("fixtures")
}

pub fn read_json(rel: &str) -> serde_json::Value {
    let path = fixtures().join(rel);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

pub fn clock() -> Arc<FixedClock> {
    Arc::new(FixedClock("2023-06-30T12:00:00Z".parse().unwrap()))
}

pub fn prompts() -> PromptConfig {
    PromptConfig::load_dir(&repo().join("prompts")).unwrap()
}

pub fn stub(prompts: &PromptConfig) -> StubProvider {
    StubProvider::from_jsonl(&fixtures().join("stub_responses.jsonl"), &prompts.taxonomy).unwrap()
}

/// A pipeline over `store` with the fixture prompts, the scripted stub and
/// a fixed clock. `llm` replaces the stub when given.
pub fn pipeline_with(store: Store, llm: Option<Arc<dyn LlmProvider>>) -> Pipeline {
    let prompts = prompts();
    let mut providers = Providers::default();
    providers.add_llm(llm.unwrap_or_else(|| Arc::new(stub(&prompts))));
    let mut config = Config::default();
    config.jobs.retry = discourse_core::provider::RetryPolicy::immediate(1);
    Pipeline::new(Arc::new(store), config, prompts, providers, clock())
}

pub fn pipeline() -> Pipeline {
    pipeline_with(Store::in_memory(), None)
}

pub fn speech_ids(p: &Pipeline) -> Vec<String> {
    p.store().list_speeches(&SpeechFilter::default()).into_iter().map(|s| s.id).collect()
}

/// Ingest, translate and annotate every fixture speech.
pub fn annotated(p: &Pipeline) {
    p.ingest_dir(&fixtures().join("speeches")).unwrap();
    for id in speech_ids(p) {
        let t = p.translate(&id, "identity").unwrap();
        assert_eq!(t.status.as_str(), "complete", "{t:?}");
        let a = p.annotate(&id, &AnnotationTask::ALL, "stub").unwrap();
        assert_eq!(a.status.as_str(), "complete", "{a:?}");
    }
}

/// The full fixture pipeline: annotate, apply the scripted decisions and
/// finalize every speech.
pub fn finalized(p: &Pipeline) {
    annotated(p);
    p.apply_decisions_file(&fixtures().join("decisions.jsonl")).unwrap();
    for id in speech_ids(p) {
        p.finalize(&id).unwrap();
    }
}
