use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use super::{build_prompt, parse_response, AnnotationTask, LlmProvider, PromptBundle, PromptConfig, RawAnnotation};
use crate::clock::Clock;
use crate::corpus::{Leader, Speech};
use crate::provider::{ProviderError, RateLimiter, RetryPolicy};

const REPAIR_NOTE: &str = "Your previous reply could not be used";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JobPolicy {
    /// Concurrent provider calls.
    pub parallelism: usize,
    pub retry: RetryPolicy,
    /// Global request budget; `None` disables rate limiting.
    pub requests_per_minute: Option<u32>,
    /// Keep every prompt sent in the outcome, for auditing.
    pub record_prompts: bool,
}

impl Default for JobPolicy {
    fn default() -> Self {
        Self { parallelism: 4, retry: RetryPolicy::default(), requests_per_minute: None, record_prompts: false }
    }
}

/// One annotation run over a speech.
pub struct AnnotationJob<'a> {
    pub speech: &'a Speech,
    pub leader: &'a Leader,
    pub tasks: Vec<AnnotationTask>,
    pub config: &'a PromptConfig,
    /// (paragraph, task) pairs already annotated; these are skipped.
    pub existing: HashSet<(usize, AnnotationTask)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub speech_id: String,
    pub paragraph_index: usize,
    pub task: AnnotationTask,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_response: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRecord {
    pub paragraph_index: usize,
    pub bundle: PromptBundle,
}

#[derive(Debug, Default)]
pub struct JobOutcome {
    /// Annotations produced by this run, ordered by (paragraph, task).
    pub annotations: Vec<RawAnnotation>,
    pub failures: Vec<FailureRecord>,
    pub skipped: usize,
    pub provider_calls: u64,
    pub prompts: Vec<PromptRecord>,
}

impl JobOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

enum CallResult {
    Done(Box<RawAnnotation>),
    Failed(FailureRecord),
}

fn call(
    provider: &dyn LlmProvider,
    limiter: Option<&RateLimiter>,
    retry: &RetryPolicy,
    bundle: &PromptBundle,
    calls: &AtomicUsize,
) -> Result<String, ProviderError> {
    retry.run(|| {
        if let Some(l) = limiter {
            l.acquire();
        }
        calls.fetch_add(1, Ordering::SeqCst);
        provider.complete(bundle)
    })
}

/// Annotates every (paragraph, task) pair not in `job.existing`. Each result
/// is handed to `sink` on the calling thread as soon as it arrives, so the
/// caller can persist incrementally and a later run only fills the gaps.
///
/// Prompts are all built before the first provider call; a prompt error
/// (missing translation or definition, identity leakage) aborts the job.
pub fn run_annotation_job(
    job: &AnnotationJob<'_>,
    provider: &dyn LlmProvider,
    policy: &JobPolicy,
    clock: &dyn Clock,
    sink: &mut dyn FnMut(&RawAnnotation) -> crate::Result<()>,
) -> crate::Result<JobOutcome> {
    let mut tasks = job.tasks.clone();
    tasks.sort();
    tasks.dedup();

    let mut work = Vec::new();
    let mut skipped = 0;
    for p in &job.speech.paragraphs {
        for &task in &tasks {
            if job.existing.contains(&(p.index, task)) {
                skipped += 1;
                continue;
            }
            let bundle = build_prompt(task, p, job.leader, job.config)?;
            work.push((p.index, bundle));
        }
    }

    let limiter = policy.requests_per_minute.map(RateLimiter::per_minute);
    let next = AtomicUsize::new(0);
    let calls = AtomicUsize::new(0);
    let workers = policy.parallelism.clamp(1, work.len().max(1));
    let (tx, rx) = mpsc::channel::<CallResult>();

    let mut outcome = JobOutcome { skipped, ..Default::default() };
    let mut sink_error = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let (work, next, calls, limiter) = (&work, &next, &calls, limiter.as_ref());
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((index, bundle)) = work.get(i) else { break };
                let result = annotate_one(job, provider, limiter, &policy.retry, clock, *index, bundle, calls);
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            match result {
                CallResult::Done(a) => {
                    if sink_error.is_none() {
                        if let Err(e) = sink(&a) {
                            sink_error = Some(e);
                            // Stop handing out new work; in-flight calls drain.
                            next.store(usize::MAX / 2, Ordering::SeqCst);
                        }
                    }
                    if sink_error.is_none() {
                        outcome.annotations.push(*a);
                    }
                }
                CallResult::Failed(f) => outcome.failures.push(f),
            }
        }
    });
    if let Some(e) = sink_error {
        return Err(e);
    }

    outcome.annotations.sort_by_key(|a| (a.paragraph_index, a.task()));
    outcome.failures.sort_by_key(|f| (f.paragraph_index, f.task));
    outcome.provider_calls = calls.load(Ordering::SeqCst) as u64;
    if policy.record_prompts {
        outcome.prompts =
            work.into_iter().map(|(paragraph_index, bundle)| PromptRecord { paragraph_index, bundle }).collect();
    }
    Ok(outcome)
}

#[allow(clippy::too_many_arguments)]
fn annotate_one(
    job: &AnnotationJob<'_>,
    provider: &dyn LlmProvider,
    limiter: Option<&RateLimiter>,
    retry: &RetryPolicy,
    clock: &dyn Clock,
    index: usize,
    bundle: &PromptBundle,
    calls: &AtomicUsize,
) -> CallResult {
    let fail = |error: String, raw_response: Option<String>| {
        CallResult::Failed(FailureRecord {
            speech_id: job.speech.id.clone(),
            paragraph_index: index,
            task: bundle.task,
            error,
            raw_response,
        })
    };
    let raw = match call(provider, limiter, retry, bundle, calls) {
        Ok(r) => r,
        Err(e) => return fail(e.to_string(), None),
    };
    let (raw, value) = match parse_response(bundle.task, &raw, &job.config.taxonomy) {
        Ok(v) => (raw, v),
        Err(first) => {
            let mut repair = bundle.clone();
            repair.system_context =
                format!("{}\n\n{REPAIR_NOTE} ({first}). {}", bundle.system_context, bundle.response_schema);
            let raw2 = match call(provider, limiter, retry, &repair, calls) {
                Ok(r) => r,
                Err(e) => return fail(format!("{first}; repair call failed: {e}"), Some(raw)),
            };
            match parse_response(bundle.task, &raw2, &job.config.taxonomy) {
                Ok(v) => (raw2, v),
                Err(e) => return fail(e.to_string(), Some(raw2)),
            }
        }
    };
    CallResult::Done(Box::new(RawAnnotation {
        speech_id: job.speech.id.clone(),
        paragraph_index: index,
        value,
        provider_name: provider.name().to_string(),
        raw_response: raw,
        created_at: clock.now(),
    }))
}
