//! The pipeline service. The CLI and the HTTP server both drive the
//! pipeline exclusively through [`Pipeline`], so identical inputs always
//! produce identical stored state.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::BandConfig;
use crate::clock::{Clock, FixedClock, SystemClock};
use crate::config::Config;
use crate::corpus::{
    translate_speech, IdentityTranslator, Leader, Speech, SpeechManifest, TranslationOptions, TranslationProvider,
};
use crate::jobs::{JobDescriptor, JobFailure, JobKind, JobParams, JobStatus};
use crate::metrics::{summarize, AccuracyReport, Selector, Summary, REPORT_TASKS};
use crate::prompting::{
    run_annotation_job, AnnotationJob, AnnotationTask, AnnotationValue, LlmProvider, OpenAiProvider, PromptConfig,
    RawAnnotation, StubProvider, TopicTaxonomy,
};
use crate::review::{
    annotation_gaps, check_decision, enqueue_reviews, machine_category, AnnotationRef, QueueEntry, ReviewDecision,
    ReviewError, ReviewState, Reviewer, ReviewerRole, ValidatedSet,
};
use crate::store::{SpeechFilter, Store};
use crate::vizdata::{ChartKind, ChartOptions, ChartSeries, VizContext};
use crate::{Error, Result};

/// Named model and translation providers.
#[derive(Clone)]
pub struct Providers {
    llm: BTreeMap<String, Arc<dyn LlmProvider>>,
    translators: BTreeMap<String, Arc<dyn TranslationProvider>>,
}

impl Default for Providers {
    fn default() -> Self {
        let mut p = Self { llm: BTreeMap::new(), translators: BTreeMap::new() };
        p.add_translator(Arc::new(IdentityTranslator::new()));
        p
    }
}

impl Providers {
    /// The `identity` translator, the `stub` model and, when configured,
    /// the `openai` model.
    pub fn from_config(config: &Config, taxonomy: &TopicTaxonomy) -> Result<Self> {
        let mut p = Self::default();
        let stub = match &config.providers.stub.script {
            Some(path) => StubProvider::from_jsonl(path, taxonomy)?,
            None => StubProvider::new(taxonomy),
        };
        p.add_llm(Arc::new(stub));
        if let Some(openai) = &config.providers.openai {
            p.add_llm(Arc::new(OpenAiProvider::new(openai.clone())?));
        }
        Ok(p)
    }

    pub fn add_llm(&mut self, provider: Arc<dyn LlmProvider>) -> &mut Self {
        self.llm.insert(provider.name().to_string(), provider);
        self
    }

    pub fn add_translator(&mut self, provider: Arc<dyn TranslationProvider>) -> &mut Self {
        self.translators.insert(provider.name().to_string(), provider);
        self
    }

    pub fn llm(&self, name: &str) -> Result<Arc<dyn LlmProvider>> {
        self.llm.get(name).cloned().ok_or_else(|| Error::not_found("provider", name))
    }

    pub fn translator(&self, name: &str) -> Result<Arc<dyn TranslationProvider>> {
        self.translators.get(name).cloned().ok_or_else(|| Error::not_found("translation provider", name))
    }

    pub fn llm_names(&self) -> Vec<String> {
        self.llm.keys().cloned().collect()
    }

    pub fn translator_names(&self) -> Vec<String> {
        self.translators.keys().cloned().collect()
    }
}

/// What an ingest added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub leaders: usize,
    pub reviewers: usize,
    pub speeches: Vec<String>,
    /// Non-fatal notes, e.g. speeches below the usual minimum length.
    pub advisories: Vec<String>,
}

/// Result of submitting one decision.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmitOutcome {
    pub target: AnnotationRef,
    /// The identical decision was already in the log; nothing was added.
    pub duplicate: bool,
    pub status: EntryStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Pending,
    Escalated,
    Resolved,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApplyReport {
    pub applied: usize,
    pub duplicates: usize,
    pub speeches: Vec<String>,
}

/// Review progress of one speech.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewStatus {
    pub speech_id: String,
    pub annotations: usize,
    pub resolved: usize,
    pub pending: Vec<AnnotationRef>,
    pub escalated: Vec<AnnotationRef>,
    /// (paragraph, task) pairs still lacking a machine annotation, for the
    /// tasks the speech has been annotated with.
    pub gaps: Vec<AnnotationRef>,
    pub finalizable: bool,
    pub latest_version: Option<u32>,
}

/// One item of a reviewer's work list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueueItem {
    pub speech_id: String,
    pub leader_id: String,
    pub paragraph_index: usize,
    pub task: AnnotationTask,
    /// `assigned`, or `escalated` for admin work.
    pub reason: &'static str,
    pub original_text: String,
    pub translated_text: Option<String>,
    pub machine_value: Value,
    pub machine_category: String,
}

pub struct Pipeline {
    store: Arc<Store>,
    config: Config,
    prompts: PromptConfig,
    providers: Providers,
    clock: Arc<dyn Clock>,
}

impl Pipeline {
    pub fn new(store: Arc<Store>, config: Config, prompts: PromptConfig, providers: Providers, clock: Arc<dyn Clock>) -> Self {
        Self { store, config, prompts, providers, clock }
    }

    /// Opens the configured store and loads prompts and providers.
    pub fn open(config: Config) -> Result<Self> {
        let store = Store::open(&config.store.path)?;
        Self::with_store(config, store)
    }

    /// Like [`Pipeline::open`], over an already opened store.
    pub fn with_store(config: Config, store: Store) -> Result<Self> {
        let store = Arc::new(store);
        let prompts = match &config.prompts.dir {
            Some(dir) => PromptConfig::load_dir(dir)?,
            None => PromptConfig::default(),
        };
        let providers = Providers::from_config(&config, &prompts.taxonomy)?;
        let clock: Arc<dyn Clock> = match config.clock.fixed {
            Some(t) => Arc::new(FixedClock(t)),
            None => Arc::new(SystemClock),
        };
        Ok(Self::new(store, config, prompts, providers, clock))
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn prompts(&self) -> &PromptConfig {
        &self.prompts
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn bands(&self) -> &BandConfig {
        &self.config.bands
    }

    pub fn taxonomy(&self) -> &TopicTaxonomy {
        &self.prompts.taxonomy
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    // Ingestion.

    /// Ingests a corpus directory: `manifest.json`, one `<id>.txt` per
    /// speech (at the top level or under `speeches/`), and optionally
    /// `leaders.json` and `reviewers.json`. Nothing is stored if any speech
    /// is invalid or already present.
    pub fn ingest_dir(&self, dir: &Path) -> Result<IngestReport> {
        let read = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(Error::io(format!("reading {}", path.display()), e)),
            }
        };
        let parse_array = |name: &str, text: &str| -> Result<Vec<Value>> {
            serde_json::from_str(text).map_err(|e| Error::json(format!("parsing {}", dir.join(name).display()), e))
        };
        let leaders: Vec<Leader> = match read("leaders.json")? {
            Some(t) => decode_all("leaders.json", parse_array("leaders.json", &t)?)?,
            None => Vec::new(),
        };
        let reviewers: Vec<Reviewer> = match read("reviewers.json")? {
            Some(t) => decode_all("reviewers.json", parse_array("reviewers.json", &t)?)?,
            None => Vec::new(),
        };
        let manifest_text = read("manifest.json")?
            .ok_or_else(|| Error::Validation(format!("{} has no manifest.json", dir.display())))?;
        let manifest: Vec<SpeechManifest> = decode_all("manifest.json", parse_array("manifest.json", &manifest_text)?)?;

        let mut speeches = Vec::new();
        let mut seen = HashSet::new();
        for m in manifest {
            crate::store::validate_id("speech", &m.id)?;
            if !seen.insert(m.id.clone()) {
                return Err(Error::Validation(format!("manifest lists speech '{}' twice", m.id)));
            }
            if self.store.has_speech(&m.id) {
                return Err(Error::Conflict(format!("speech '{}' already exists", m.id)));
            }
            let known_leader = leaders.iter().any(|l| l.id == m.leader_id) || self.store.get_leader(&m.leader_id).is_ok();
            if !known_leader {
                return Err(Error::not_found("leader", m.leader_id.clone()));
            }
            let body = match read(&format!("{}.txt", m.id))? {
                Some(b) => b,
                None => read(&format!("speeches/{}.txt", m.id))?
                    .ok_or_else(|| Error::Validation(format!("no text file for speech '{}'", m.id)))?,
            };
            speeches.push(Speech::from_manifest(m, &body)?);
        }

        let report = IngestReport {
            leaders: leaders.len(),
            reviewers: reviewers.len(),
            speeches: speeches.iter().map(|s| s.id.clone()).collect(),
            advisories: speeches.iter().flat_map(|s| s.advisories()).collect(),
        };
        for l in leaders {
            self.store.put_leader(l)?;
        }
        for r in reviewers {
            self.store.put_reviewer(r)?;
        }
        for s in speeches {
            self.store.insert_speech(s)?;
        }
        Ok(report)
    }

    /// Ingests one speech from its manifest record and raw text.
    pub fn ingest_speech(&self, manifest: SpeechManifest, body: &str) -> Result<Speech> {
        let speech = Speech::from_manifest(manifest, body)?;
        self.store.insert_speech(speech.clone())?;
        Ok(speech)
    }

    // Jobs.

    /// Registers a translate or annotate job without running it.
    pub fn create_job(&self, kind: JobKind, speech_id: &str, params: JobParams) -> Result<JobDescriptor> {
        self.store.get_speech(speech_id)?;
        match kind {
            JobKind::Translate => {
                self.providers.translator(params.provider.as_deref().unwrap_or("identity"))?;
            }
            JobKind::Annotate => {
                self.providers.llm(params.provider.as_deref().unwrap_or("stub"))?;
                if params.tasks.is_empty() {
                    return Err(Error::Validation("annotate needs at least one task".into()));
                }
            }
            JobKind::Finalize => return Err(Error::Validation("finalize runs synchronously".into())),
        }
        let job = JobDescriptor::new(String::new(), kind, speech_id.to_string(), params, self.clock.now());
        self.store.create_job(job, true)
    }

    /// Runs a registered job to a terminal state and returns its final
    /// descriptor. Errors during execution mark the job failed rather than
    /// being returned.
    pub fn run_job(&self, job_id: &str) -> Result<JobDescriptor> {
        let mut job = self.store.get_job(job_id)?;
        if job.status != JobStatus::Pending {
            return Err(Error::Conflict(format!("job '{job_id}' is {}", job.status)));
        }
        job.status = JobStatus::Running;
        job.updated_at = self.clock.now();
        self.store.update_job(job.clone())?;

        let outcome = match job.kind {
            JobKind::Translate => self.exec_translate(&job),
            JobKind::Annotate => self.exec_annotate(&job),
            JobKind::Finalize => Err(Error::Validation("finalize runs synchronously".into())),
        };
        match outcome {
            Ok((result, failures)) => {
                job.status = if failures.is_empty() { JobStatus::Complete } else { JobStatus::Partial };
                job.result = result;
                job.failure_manifest = failures;
            }
            Err(e) => {
                tracing::warn!(job = %job.job_id, error = %e, "job failed");
                job.status = JobStatus::Failed;
                job.error = Some(serde_json::to_value(e.envelope()).expect("envelope serializes"));
            }
        }
        job.updated_at = self.clock.now();
        self.store.update_job(job.clone())?;
        Ok(job)
    }

    /// Marks jobs left pending or running by a previous process as failed.
    /// Returns their ids.
    pub fn recover_interrupted_jobs(&self) -> Result<Vec<String>> {
        let mut out = Vec::new();
        for mut job in self.store.jobs().into_iter().filter(|j| !j.status.is_terminal()) {
            job.status = JobStatus::Failed;
            job.error = Some(json!({
                "code": "internal",
                "message": "job was interrupted before completing; start it again to fill the gaps",
                "details": null,
            }));
            job.updated_at = self.clock.now();
            out.push(job.job_id.clone());
            self.store.update_job(job)?;
        }
        Ok(out)
    }

    /// Translates a speech synchronously.
    pub fn translate(&self, speech_id: &str, provider: &str) -> Result<JobDescriptor> {
        let params = JobParams { provider: Some(provider.to_string()), tasks: vec![] };
        let job = self.create_job(JobKind::Translate, speech_id, params)?;
        self.run_job(&job.job_id)
    }

    /// Annotates a speech synchronously.
    pub fn annotate(&self, speech_id: &str, tasks: &[AnnotationTask], provider: &str) -> Result<JobDescriptor> {
        let params = JobParams { provider: Some(provider.to_string()), tasks: tasks.to_vec() };
        let job = self.create_job(JobKind::Annotate, speech_id, params)?;
        self.run_job(&job.job_id)
    }

    fn exec_translate(&self, job: &JobDescriptor) -> Result<(Value, Vec<JobFailure>)> {
        let speech = self.store.get_speech(&job.speech_id)?;
        let name = job.params.provider.as_deref().unwrap_or("identity");
        let provider = self.providers.translator(name)?;
        let t = &self.config.translation;
        let options = TranslationOptions { target: t.target.clone(), retry: t.retry.clone(), parallelism: t.parallelism };
        let translated = translate_speech(&speech, provider.as_ref(), self.store.translation_cache(), &options)?;
        let untranslated = translated.translation.as_ref().map(|t| t.untranslated.clone()).unwrap_or_default();
        self.store.update_speech(translated.clone())?;
        let failures = untranslated
            .iter()
            .map(|&i| JobFailure { paragraph_index: i, task: None, error: "translation failed".into(), raw_response: None })
            .collect();
        let result = json!({
            "provider": name,
            "target_language": options.target,
            "paragraphs": translated.paragraphs.len(),
            "untranslated": untranslated.len(),
        });
        Ok((result, failures))
    }

    /// The prompt configuration for a job: every registered leader's names
    /// are blocked from identity-free prompts, not just the speaker's.
    fn job_prompts(&self) -> PromptConfig {
        let mut prompts = self.prompts.clone();
        for l in self.store.leaders() {
            prompts.blocklist.extend(l.identity_terms());
        }
        prompts.blocklist.sort();
        prompts.blocklist.dedup();
        prompts
    }

    fn exec_annotate(&self, job: &JobDescriptor) -> Result<(Value, Vec<JobFailure>)> {
        let speech = self.store.get_speech(&job.speech_id)?;
        let leader = self.store.get_leader(&speech.leader_id)?;
        let name = job.params.provider.as_deref().unwrap_or("stub");
        let provider = self.providers.llm(name)?;
        let prompts = self.job_prompts();
        let existing = self.store.annotations(&speech.id, None).iter().map(|a| (a.paragraph_index, a.task())).collect();
        let spec = AnnotationJob { speech: &speech, leader: &leader, tasks: job.params.tasks.clone(), config: &prompts, existing };
        let store = &self.store;
        let mut sink = |a: &RawAnnotation| store.put_annotation(a.clone());
        let outcome = run_annotation_job(&spec, provider.as_ref(), &self.config.jobs, self.clock.as_ref(), &mut sink)?;

        let mut result = json!({
            "provider": name,
            "annotations": outcome.annotations.len(),
            "skipped": outcome.skipped,
            "provider_calls": outcome.provider_calls,
            "failures": outcome.failures.len(),
        });
        if self.config.review.auto_enqueue {
            match self.enqueue(&speech.id) {
                Ok(n) => result["queued"] = json!(n),
                Err(e) => result["queue_error"] = json!(e.to_string()),
            }
        }
        Ok((result, outcome.failures.into_iter().map(JobFailure::from).collect()))
    }

    // Review.

    /// Queues every annotation of a speech for review under the configured
    /// policy. Entries already queued are kept as they are. Returns the
    /// number of new entries.
    pub fn enqueue(&self, speech_id: &str) -> Result<usize> {
        self.store.get_speech(speech_id)?;
        let targets: Vec<AnnotationRef> = self.store.annotations(speech_id, None).iter().map(AnnotationRef::of).collect();
        let entries = enqueue_reviews(&targets, &self.store.reviewers(), &self.config.review.policy)?;
        self.store.add_queue_entries(entries)
    }

    fn machine_annotation(&self, target: &AnnotationRef) -> Result<RawAnnotation> {
        self.store.get_speech(&target.speech_id)?;
        self.store
            .annotations(&target.speech_id, Some(target.task))
            .into_iter()
            .find(|a| a.paragraph_index == target.paragraph_index)
            .ok_or_else(|| Error::not_found("annotation", target.to_string()))
    }

    /// Checks a decision against the stored annotation, the reviewer
    /// registry and the queue.
    pub fn validate_decision(&self, d: &ReviewDecision) -> Result<()> {
        let target = d.target();
        let machine = self.machine_annotation(&target)?;
        let reviewer = self.store.get_reviewer(&d.reviewer_id).map_err(|_| ReviewError::UnknownReviewer(d.reviewer_id.clone()))?;
        if reviewer.role != ReviewerRole::Admin {
            let assigned = self.store.queue(&target.speech_id).iter().any(|q| q.target() == target && q.reviewer_id == d.reviewer_id);
            if !assigned {
                return Err(ReviewError::NotAssigned { reviewer_id: d.reviewer_id.clone(), target }.into());
            }
        }
        check_decision(d, &machine.value, self.taxonomy(), self.bands())?;
        Ok(())
    }

    /// Validates and records one decision. Resubmitting an identical
    /// decision is a no-op.
    pub fn submit_decision(&self, d: ReviewDecision) -> Result<SubmitOutcome> {
        self.validate_decision(&d)?;
        let target = d.target();
        let duplicate = self.store.decisions(&d.speech_id).contains(&d);
        if !duplicate {
            self.store.append_decisions(vec![d])?;
        }
        let status = self.entry_status(&target)?;
        Ok(SubmitOutcome { target, duplicate, status })
    }

    /// Applies a JSONL file of decisions. Every line is validated before
    /// anything is recorded.
    pub fn apply_decisions_file(&self, path: &Path) -> Result<ApplyReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut batch = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let at = |e: &dyn std::fmt::Display| Error::Validation(format!("{}:{}: {e}", path.display(), n + 1));
            let d: ReviewDecision = serde_json::from_str(line).map_err(|e| at(&e))?;
            self.validate_decision(&d).map_err(|e| match e {
                Error::NotFound { .. } => e,
                other => at(&other),
            })?;
            batch.push(d);
        }
        self.apply_batch(batch)
    }

    fn apply_batch(&self, batch: Vec<ReviewDecision>) -> Result<ApplyReport> {
        let mut logs: BTreeMap<String, Vec<ReviewDecision>> = BTreeMap::new();
        let mut fresh = Vec::new();
        let mut duplicates = 0;
        for d in batch {
            let log = logs.entry(d.speech_id.clone()).or_insert_with(|| self.store.decisions(&d.speech_id));
            if log.contains(&d) {
                duplicates += 1;
            } else {
                log.push(d.clone());
                fresh.push(d);
            }
        }
        let applied = fresh.len();
        self.store.append_decisions(fresh)?;
        Ok(ApplyReport { applied, duplicates, speeches: logs.into_keys().collect() })
    }

    fn review_state_report(&self, speech_id: &str) -> Result<(crate::review::StatusReport, usize)> {
        let annotations = self.store.annotations(speech_id, None);
        let queue = self.store.queue(speech_id);
        let decisions = self.store.decisions(speech_id);
        let reviewers = self.store.reviewers();
        let state = ReviewState {
            annotations: &annotations,
            queue: &queue,
            decisions: &decisions,
            reviewers: &reviewers,
            taxonomy: self.taxonomy(),
            bands: self.bands(),
        };
        Ok((state.status()?, annotations.len()))
    }

    fn entry_status(&self, target: &AnnotationRef) -> Result<EntryStatus> {
        let (report, _) = self.review_state_report(&target.speech_id)?;
        Ok(if report.pending.contains(target) {
            EntryStatus::Pending
        } else if report.escalated.contains(target) {
            EntryStatus::Escalated
        } else {
            EntryStatus::Resolved
        })
    }

    pub fn review_status(&self, speech_id: &str) -> Result<ReviewStatus> {
        let speech = self.store.get_speech(speech_id)?;
        let (report, n) = self.review_state_report(speech_id)?;
        let annotations = self.store.annotations(speech_id, None);
        let tasks: BTreeSet<AnnotationTask> = annotations.iter().map(RawAnnotation::task).collect();
        let gaps = annotation_gaps(speech_id, speech.paragraphs.len(), &tasks, &annotations);
        Ok(ReviewStatus {
            speech_id: speech_id.to_string(),
            annotations: n,
            resolved: report.resolved.len(),
            finalizable: n > 0 && gaps.is_empty() && report.pending.is_empty() && report.escalated.is_empty(),
            pending: report.pending,
            escalated: report.escalated,
            gaps,
            latest_version: self.store.validated_versions(speech_id).last().copied(),
        })
    }

    /// A reviewer's open work: assigned entries they have not decided yet,
    /// or for admins every escalated entry.
    pub fn review_queue(&self, reviewer_id: &str, speech_id: Option<&str>) -> Result<Vec<QueueItem>> {
        let reviewer = self.store.get_reviewer(reviewer_id)?;
        let speeches: Vec<Speech> = match speech_id {
            Some(id) => vec![self.store.get_speech(id)?],
            None => self.store.list_speeches(&SpeechFilter::default()),
        };
        let mut out = Vec::new();
        for speech in &speeches {
            let (report, _) = self.review_state_report(&speech.id)?;
            let annotations: BTreeMap<(usize, AnnotationTask), RawAnnotation> =
                self.store.annotations(&speech.id, None).into_iter().map(|a| ((a.paragraph_index, a.task()), a)).collect();
            let targets: Vec<(AnnotationRef, &'static str)> = if reviewer.role == ReviewerRole::Admin {
                report.escalated.iter().map(|t| (t.clone(), "escalated")).collect()
            } else {
                let decided: HashSet<AnnotationRef> = self
                    .store
                    .decisions(&speech.id)
                    .iter()
                    .filter(|d| d.reviewer_id == reviewer_id)
                    .map(ReviewDecision::target)
                    .collect();
                let open: HashSet<&AnnotationRef> = report.pending.iter().chain(&report.escalated).collect();
                self.store
                    .queue(&speech.id)
                    .iter()
                    .filter(|q: &&QueueEntry| q.reviewer_id == reviewer_id)
                    .map(QueueEntry::target)
                    .filter(|t| !decided.contains(t) && open.contains(t))
                    .map(|t| (t, "assigned"))
                    .collect()
            };
            for (t, reason) in targets {
                let Some(a) = annotations.get(&(t.paragraph_index, t.task)) else { continue };
                let p = &speech.paragraphs[t.paragraph_index];
                out.push(QueueItem {
                    speech_id: speech.id.clone(),
                    leader_id: speech.leader_id.clone(),
                    paragraph_index: t.paragraph_index,
                    task: t.task,
                    reason,
                    original_text: p.original_text.clone(),
                    translated_text: p.translated_text.clone(),
                    machine_value: a.value.to_json(),
                    machine_category: machine_category(&a.value, self.bands())?,
                });
            }
        }
        Ok(out)
    }

    /// Freezes the reviewed annotations of a speech into a new validated
    /// version.
    pub fn finalize(&self, speech_id: &str) -> Result<ValidatedSet> {
        let speech = self.store.get_speech(speech_id)?;
        let annotations = self.store.annotations(speech_id, None);
        if annotations.is_empty() {
            return Err(Error::Conflict(format!("speech '{speech_id}' has no annotations to finalize")));
        }
        let busy = self.store.jobs().into_iter().any(|j| {
            j.speech_id == speech_id && j.kind == JobKind::Annotate && !j.status.is_terminal()
        });
        if busy {
            return Err(Error::Conflict(format!("speech '{speech_id}' has an annotate job in progress")));
        }
        let tasks: BTreeSet<AnnotationTask> = annotations.iter().map(RawAnnotation::task).collect();
        let gaps = annotation_gaps(speech_id, speech.paragraphs.len(), &tasks, &annotations);
        if !gaps.is_empty() {
            return Err(Error::Conflict(format!(
                "speech '{speech_id}' has {} un-annotated entries, first {}",
                gaps.len(),
                gaps[0]
            )));
        }
        let queue = self.store.queue(speech_id);
        let decisions = self.store.decisions(speech_id);
        let reviewers = self.store.reviewers();
        let state = ReviewState {
            annotations: &annotations,
            queue: &queue,
            decisions: &decisions,
            reviewers: &reviewers,
            taxonomy: self.taxonomy(),
            bands: self.bands(),
        };
        let now = self.clock.now();
        let set = state.finalize(speech_id, self.store.next_validated_version(speech_id), now)?;
        self.store.append_validated(set.clone())?;

        let mut job = JobDescriptor::new(String::new(), JobKind::Finalize, speech_id.to_string(), JobParams::default(), now);
        job.status = JobStatus::Complete;
        job.result = json!({ "version": set.version, "entries": set.entries.len(), "source_version": set.source_version() });
        self.store.create_job(job, false)?;
        Ok(set)
    }

    // Analytics.

    pub fn accuracy(&self, selector: &Selector) -> Result<AccuracyReport> {
        let dataset = self.store.dataset();
        let scope = dataset.select(selector)?;
        Ok(AccuracyReport::build(&scope, selector, &REPORT_TASKS)?)
    }

    pub fn summary(&self, selector: &Selector) -> Result<Summary> {
        Ok(summarize(&self.store.dataset(), selector, self.bands())?)
    }

    pub fn chart(&self, kind: ChartKind, selector: &Selector, options: ChartOptions) -> Result<ChartSeries> {
        let dataset = self.store.dataset();
        let leaders = self.store.leaders();
        let ctx = VizContext { dataset: &dataset, leaders: &leaders, taxonomy: self.taxonomy(), bands: self.bands(), options };
        Ok(ctx.chart_data(kind, selector)?)
    }

    /// Stored annotations, checked against the speech registry.
    pub fn annotations(&self, speech_id: &str, task: Option<AnnotationTask>) -> Result<Vec<RawAnnotation>> {
        self.store.get_speech(speech_id)?;
        Ok(self.store.annotations(speech_id, task))
    }

    /// The machine category of a stored annotation value, for display.
    pub fn category_of(&self, value: &AnnotationValue) -> Result<String> {
        Ok(machine_category(value, self.bands())?)
    }
}

fn decode_all<T: serde::de::DeserializeOwned>(name: &str, values: Vec<Value>) -> Result<Vec<T>> {
    values
        .into_iter()
        .enumerate()
        .map(|(i, v)| serde_json::from_value(v).map_err(|e| Error::json(format!("{name} record {i}"), e)))
        .collect()
}
