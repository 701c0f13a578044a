//! Durable storage for every record family, plus bundle export/import.
//!
//! State lives in memory behind a lock and is mirrored to a directory tree
//! (when the store is not in-memory). Each record file is replaced
//! atomically by writing a temporary file and renaming it over the target,
//! so a crash never leaves a torn record. Temporary and hidden files are
//! ignored when loading.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{ElectionPeriod, Leader, Speech, TranslationCache, TranslationKey};
use crate::jobs::JobDescriptor;
use crate::metrics::{Dataset, SpeechRecord};
use crate::prompting::{AnnotationTask, RawAnnotation};
use crate::review::{QueueEntry, ReviewDecision, Reviewer, ValidatedSet};
use crate::{Error, Result, SCHEMA_VERSION};

const BUNDLE_FORMAT: &str = "discourse-bundle";

fn with_version<T: Serialize>(record: &T) -> Value {
    let mut v = serde_json::to_value(record).expect("record serializes");
    if let Value::Object(m) = &mut v {
        m.entry("schema_version").or_insert(Value::from(SCHEMA_VERSION));
    }
    v
}

fn from_versioned<T: DeserializeOwned>(v: Value, path: &Path) -> Result<T> {
    let found = v.get("schema_version").and_then(Value::as_u64);
    match found {
        Some(n) if n == SCHEMA_VERSION as u64 => {}
        other => {
            return Err(Error::SchemaVersion {
                found: other.unwrap_or(0) as u32,
                expected: SCHEMA_VERSION,
                path: path.display().to_string(),
            })
        }
    }
    serde_json::from_value(v).map_err(|e| Error::json(format!("decoding {}", path.display()), e))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().expect("record paths have a parent");
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .map_err(|e| Error::io(format!("creating temp file in {}", dir.display()), e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    tmp.as_file().sync_data().map_err(|e| Error::io(format!("syncing {}", path.display()), e))?;
    tmp.persist(path).map_err(|e| Error::io(format!("replacing {}", path.display()), e.error))?;
    Ok(())
}

fn json_bytes<T: Serialize>(record: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&with_version(record)).expect("record serializes");
    bytes.push(b'\n');
    bytes
}

fn jsonl_bytes<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> Vec<u8> {
    let mut bytes = Vec::new();
    for r in records {
        serde_json::to_writer(&mut bytes, &with_version(r)).expect("record serializes");
        bytes.push(b'\n');
    }
    bytes
}

fn write_json<T: Serialize>(path: &Path, record: &T) -> Result<()> {
    write_atomic(path, &json_bytes(record))
}

fn write_jsonl<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    write_atomic(path, &jsonl_bytes(records))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let v: Value = serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
    from_versioned(v, path)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line)
            .map_err(|e| Error::json(format!("parsing {} line {}", path.display(), n + 1), e))?;
        out.push(from_versioned(v, path)?);
    }
    Ok(out)
}

/// Record files in `dir` with the given extension, sorted, skipping hidden
/// and temporary files.
fn record_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(format!("listing {}", dir.display()), e)),
    };
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(format!("listing {}", dir.display()), e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().to_string();
        if name.starts_with('.') || !path.is_file() || path.extension().and_then(|e| e.to_str()) != Some(ext) {
            continue;
        }
        out.push(path);
    }
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(format!("listing {}", dir.display()), e)),
    };
    let mut out: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir() && !e.file_name().to_string_lossy().starts_with('.'))
        .map(|e| e.path())
        .collect();
    out.sort();
    Ok(out)
}

/// Ids become file names; keep them to a safe alphabet.
pub fn validate_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!("{kind} id '{id}' must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'")))
    }
}

/// Filters for [`Store::list_speeches`]. Unset fields match everything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechFilter {
    pub leader: Option<String>,
    pub period: Option<ElectionPeriod>,
    pub from: Option<NaiveDate>,
    pub to: Option<NaiveDate>,
}

impl SpeechFilter {
    pub fn matches(&self, s: &Speech) -> bool {
        self.leader.as_ref().is_none_or(|l| &s.leader_id == l)
            && self.period.is_none_or(|p| s.election_period == p)
            && self.from.is_none_or(|d| s.date >= d)
            && self.to.is_none_or(|d| s.date <= d)
    }
}

/// A cached response for an idempotency key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdempotentResponse {
    pub key: String,
    /// Fingerprint of method, path and body; a reused key with a different
    /// request is a conflict.
    pub request_fingerprint: String,
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Default, Clone, PartialEq)]
struct State {
    leaders: BTreeMap<String, Leader>,
    reviewers: BTreeMap<String, Reviewer>,
    speeches: BTreeMap<String, Speech>,
    annotations: BTreeMap<String, BTreeMap<(usize, AnnotationTask), RawAnnotation>>,
    queue: BTreeMap<String, BTreeSet<QueueEntry>>,
    decisions: BTreeMap<String, Vec<ReviewDecision>>,
    validated: BTreeMap<String, Vec<ValidatedSet>>,
    jobs: BTreeMap<String, JobDescriptor>,
    idempotency: BTreeMap<String, IdempotentResponse>,
}

pub struct Store {
    root: Option<PathBuf>,
    state: RwLock<State>,
    /// Serializes writers so file contents always match the in-memory state.
    write: Mutex<()>,
    translations: Box<dyn TranslationCache>,
}

/// Translation cache stored as one file per key.
pub struct FileTranslationCache {
    dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct CachedTranslation {
    key: TranslationKey,
    translation: String,
}

impl FileTranslationCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl TranslationCache for FileTranslationCache {
    fn get(&self, key: &TranslationKey) -> Option<String> {
        let path = self.dir.join(format!("{}.json", key.digest()));
        let c: CachedTranslation = read_json(&path).ok()?;
        (c.key == *key).then_some(c.translation)
    }

    fn put(&self, key: &TranslationKey, translation: &str) -> Result<()> {
        let path = self.dir.join(format!("{}.json", key.digest()));
        write_json(&path, &CachedTranslation { key: key.clone(), translation: translation.to_string() })
    }
}

impl Store {
    pub fn in_memory() -> Self {
        Self {
            root: None,
            state: RwLock::new(State::default()),
            write: Mutex::new(()),
            translations: Box::<crate::corpus::MemoryTranslationCache>::default(),
        }
    }

    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        let state = Self::load(&root)?;
        Ok(Self {
            translations: Box::new(FileTranslationCache::new(root.join("cache").join("translations"))),
            root: Some(root),
            state: RwLock::new(state),
            write: Mutex::new(()),
        })
    }

    fn load(root: &Path) -> Result<State> {
        let mut st = State::default();
        for p in record_files(&root.join("leaders"), "json")? {
            let l: Leader = read_json(&p)?;
            st.leaders.insert(l.id.clone(), l);
        }
        for p in record_files(&root.join("reviewers"), "json")? {
            let r: Reviewer = read_json(&p)?;
            st.reviewers.insert(r.id.clone(), r);
        }
        for p in record_files(&root.join("speeches"), "json")? {
            let s: Speech = read_json(&p)?;
            st.speeches.insert(s.id.clone(), s);
        }
        for p in record_files(&root.join("annotations"), "jsonl")? {
            for a in read_jsonl::<RawAnnotation>(&p)? {
                st.annotations.entry(a.speech_id.clone()).or_default().insert((a.paragraph_index, a.task()), a);
            }
        }
        for p in record_files(&root.join("queue"), "jsonl")? {
            for q in read_jsonl::<QueueEntry>(&p)? {
                st.queue.entry(q.speech_id.clone()).or_default().insert(q);
            }
        }
        for p in record_files(&root.join("decisions"), "jsonl")? {
            for d in read_jsonl::<ReviewDecision>(&p)? {
                st.decisions.entry(d.speech_id.clone()).or_default().push(d);
            }
        }
        for dir in subdirs(&root.join("validated"))? {
            for p in record_files(&dir, "json")? {
                let v: ValidatedSet = read_json(&p)?;
                st.validated.entry(v.speech_id.clone()).or_default().push(v);
            }
        }
        for versions in st.validated.values_mut() {
            versions.sort_by_key(|v| v.version);
        }
        for p in record_files(&root.join("jobs"), "json")? {
            let j: JobDescriptor = read_json(&p)?;
            st.jobs.insert(j.job_id.clone(), j);
        }
        for p in record_files(&root.join("idempotency"), "json")? {
            let r: IdempotentResponse = read_json(&p)?;
            st.idempotency.insert(r.key.clone(), r);
        }
        Ok(st)
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    pub fn translation_cache(&self) -> &dyn TranslationCache {
        self.translations.as_ref()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().expect("store lock poisoned")
    }

    /// Runs a mutation. `f` must either fail without touching the state or
    /// apply its change and name the records to rewrite. Files are rendered
    /// under the state lock and written after it is released, so readers
    /// never wait on disk. Writers stay serialized throughout; if a write
    /// fails, memory is reloaded from disk so the two never diverge.
    fn mutate<R>(&self, f: impl FnOnce(&mut State) -> Result<(R, Vec<Persist>)>) -> Result<R> {
        let _w = self.write.lock().expect("store write lock poisoned");
        let (out, files) = {
            let mut st = self.state.write().expect("store lock poisoned");
            let (out, persists) = f(&mut st)?;
            let files = match &self.root {
                Some(root) => persists.iter().map(|p| p.render(root, &st)).collect(),
                None => Vec::new(),
            };
            (out, files)
        };
        for (path, bytes) in files {
            if let Err(e) = write_atomic(&path, &bytes) {
                let root = self.root.as_deref().expect("files imply a root");
                if let Ok(disk) = Self::load(root) {
                    *self.state.write().expect("store lock poisoned") = disk;
                }
                return Err(e);
            }
        }
        Ok(out)
    }

    // Leaders and reviewers.

    pub fn put_leader(&self, leader: Leader) -> Result<()> {
        validate_id("leader", &leader.id)?;
        leader.validate()?;
        self.mutate(|st| {
            if st.leaders.get(&leader.id) == Some(&leader) {
                return Ok(((), vec![]));
            }
            let id = leader.id.clone();
            st.leaders.insert(id.clone(), leader);
            Ok(((), vec![Persist::Leader(id)]))
        })
    }

    pub fn leaders(&self) -> Vec<Leader> {
        self.read().leaders.values().cloned().collect()
    }

    pub fn get_leader(&self, id: &str) -> Result<Leader> {
        self.read().leaders.get(id).cloned().ok_or_else(|| Error::not_found("leader", id))
    }

    pub fn put_reviewer(&self, reviewer: Reviewer) -> Result<()> {
        validate_id("reviewer", &reviewer.id)?;
        self.mutate(|st| {
            if st.reviewers.get(&reviewer.id) == Some(&reviewer) {
                return Ok(((), vec![]));
            }
            let id = reviewer.id.clone();
            st.reviewers.insert(id.clone(), reviewer);
            Ok(((), vec![Persist::Reviewer(id)]))
        })
    }

    pub fn reviewers(&self) -> Vec<Reviewer> {
        self.read().reviewers.values().cloned().collect()
    }

    pub fn get_reviewer(&self, id: &str) -> Result<Reviewer> {
        self.read().reviewers.get(id).cloned().ok_or_else(|| Error::not_found("reviewer", id))
    }

    // Speeches.

    /// Adds a new speech. Its leader must exist and its id must be unused.
    pub fn insert_speech(&self, speech: Speech) -> Result<()> {
        validate_id("speech", &speech.id)?;
        speech.validate()?;
        self.mutate(|st| {
            if !st.leaders.contains_key(&speech.leader_id) {
                return Err(Error::not_found("leader", speech.leader_id.clone()));
            }
            if st.speeches.contains_key(&speech.id) {
                return Err(Error::Conflict(format!("speech '{}' already exists", speech.id)));
            }
            let id = speech.id.clone();
            st.speeches.insert(id.clone(), speech);
            Ok(((), vec![Persist::Speech(id)]))
        })
    }

    /// Replaces a stored speech, e.g. after translation. Original texts must
    /// be unchanged.
    pub fn update_speech(&self, speech: Speech) -> Result<()> {
        speech.validate()?;
        self.mutate(|st| {
            let old = st.speeches.get(&speech.id).ok_or_else(|| Error::not_found("speech", speech.id.clone()))?;
            let same_text = old.paragraphs.len() == speech.paragraphs.len()
                && old.paragraphs.iter().zip(&speech.paragraphs).all(|(a, b)| a.original_text == b.original_text);
            if !same_text {
                return Err(Error::Conflict(format!("speech '{}' original text cannot change", speech.id)));
            }
            let id = speech.id.clone();
            st.speeches.insert(id.clone(), speech);
            Ok(((), vec![Persist::Speech(id)]))
        })
    }

    pub fn get_speech(&self, id: &str) -> Result<Speech> {
        self.read().speeches.get(id).cloned().ok_or_else(|| Error::not_found("speech", id))
    }

    pub fn has_speech(&self, id: &str) -> bool {
        self.read().speeches.contains_key(id)
    }

    /// Speeches matching `filter`, ordered by (date, id).
    pub fn list_speeches(&self, filter: &SpeechFilter) -> Vec<Speech> {
        let mut out: Vec<Speech> = self.read().speeches.values().filter(|s| filter.matches(s)).cloned().collect();
        out.sort_by(|a, b| (a.date, &a.id).cmp(&(b.date, &b.id)));
        out
    }

    // Raw annotations.

    /// Stores one machine annotation. A second, different annotation for the
    /// same (speech, paragraph, task) is a conflict.
    pub fn put_annotation(&self, a: RawAnnotation) -> Result<()> {
        self.put_annotations(std::slice::from_ref(&a))
    }

    pub fn put_annotations(&self, batch: &[RawAnnotation]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        self.mutate(|st| {
            let mut fresh: BTreeMap<(String, usize, AnnotationTask), &RawAnnotation> = BTreeMap::new();
            for a in batch {
                let speech = st.speeches.get(&a.speech_id).ok_or_else(|| Error::not_found("speech", a.speech_id.clone()))?;
                if a.paragraph_index >= speech.paragraphs.len() {
                    return Err(Error::Validation(format!(
                        "speech '{}' has no paragraph {}",
                        a.speech_id, a.paragraph_index
                    )));
                }
                let key = (a.speech_id.clone(), a.paragraph_index, a.task());
                let old = st.annotations.get(&a.speech_id).and_then(|m| m.get(&(a.paragraph_index, a.task())));
                match old.or(fresh.get(&key).copied()) {
                    Some(old) if old == a => {}
                    Some(_) => {
                        return Err(Error::Conflict(format!(
                            "{}#{}/{} is already annotated",
                            a.speech_id,
                            a.paragraph_index,
                            a.task()
                        )))
                    }
                    None => {
                        fresh.insert(key, a);
                    }
                }
            }
            let mut touched = BTreeSet::new();
            for ((sid, p, task), a) in fresh {
                st.annotations.entry(sid.clone()).or_default().insert((p, task), a.clone());
                touched.insert(sid);
            }
            Ok(((), touched.into_iter().map(Persist::Annotations).collect()))
        })
    }

    /// Annotations for a speech, ordered by (paragraph, task).
    pub fn annotations(&self, speech_id: &str, task: Option<AnnotationTask>) -> Vec<RawAnnotation> {
        self.read()
            .annotations
            .get(speech_id)
            .into_iter()
            .flat_map(|m| m.values())
            .filter(|a| task.is_none_or(|t| a.task() == t))
            .cloned()
            .collect()
    }

    // Review queue and decisions.

    /// Adds queue entries, ignoring ones already present. Returns how many
    /// were new.
    pub fn add_queue_entries(&self, entries: Vec<QueueEntry>) -> Result<usize> {
        self.mutate(|st| {
            let mut added = 0;
            let mut touched = BTreeSet::new();
            for e in entries {
                let sid = e.speech_id.clone();
                if st.queue.entry(sid.clone()).or_default().insert(e) {
                    added += 1;
                    touched.insert(sid);
                }
            }
            Ok((added, touched.into_iter().map(Persist::Queue).collect()))
        })
    }

    pub fn queue(&self, speech_id: &str) -> Vec<QueueEntry> {
        self.read().queue.get(speech_id).into_iter().flatten().cloned().collect()
    }

    pub fn queue_all(&self) -> Vec<QueueEntry> {
        self.read().queue.values().flatten().cloned().collect()
    }

    /// Appends to a speech's decision log. Nothing is ever overwritten; the
    /// latest decision per reviewer is the effective one.
    pub fn append_decisions(&self, batch: Vec<ReviewDecision>) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        self.mutate(|st| {
            let mut touched = BTreeSet::new();
            for d in batch {
                touched.insert(d.speech_id.clone());
                st.decisions.entry(d.speech_id.clone()).or_default().push(d);
            }
            Ok(((), touched.into_iter().map(Persist::Decisions).collect()))
        })
    }

    /// The decision log of a speech in submission order.
    pub fn decisions(&self, speech_id: &str) -> Vec<ReviewDecision> {
        self.read().decisions.get(speech_id).cloned().unwrap_or_default()
    }

    // Validated sets.

    /// Stores a new finalized version. Versions are append-only and must be
    /// consecutive.
    pub fn append_validated(&self, set: ValidatedSet) -> Result<()> {
        self.mutate(|st| {
            if !st.speeches.contains_key(&set.speech_id) {
                return Err(Error::not_found("speech", set.speech_id.clone()));
            }
            let versions = st.validated.entry(set.speech_id.clone()).or_default();
            let expected = versions.last().map_or(1, |v| v.version + 1);
            if set.version != expected {
                return Err(Error::Conflict(format!(
                    "speech '{}' next validated version is {expected}, not {}",
                    set.speech_id, set.version
                )));
            }
            let key = (set.speech_id.clone(), set.version);
            versions.push(set);
            Ok(((), vec![Persist::Validated(key.0, key.1)]))
        })
    }

    pub fn next_validated_version(&self, speech_id: &str) -> u32 {
        self.read().validated.get(speech_id).and_then(|v| v.last()).map_or(1, |v| v.version + 1)
    }

    pub fn latest_validated(&self, speech_id: &str) -> Option<ValidatedSet> {
        self.read().validated.get(speech_id).and_then(|v| v.last()).cloned()
    }

    pub fn validated_version(&self, speech_id: &str, version: u32) -> Option<ValidatedSet> {
        self.read().validated.get(speech_id)?.iter().find(|v| v.version == version).cloned()
    }

    pub fn validated_versions(&self, speech_id: &str) -> Vec<u32> {
        self.read().validated.get(speech_id).into_iter().flatten().map(|v| v.version).collect()
    }

    /// Every speech with its latest finalized set, for analytics.
    pub fn dataset(&self) -> Dataset {
        let st = self.read();
        Dataset::new(
            st.speeches
                .values()
                .map(|s| SpeechRecord {
                    speech: s.clone(),
                    validated: st.validated.get(&s.id).and_then(|v| v.last()).cloned(),
                })
                .collect(),
        )
    }

    // Jobs.

    /// Registers a new job, assigning the next sequential id. With
    /// `exclusive`, fails if the speech already has an active job of the
    /// same kind.
    pub fn create_job(&self, mut job: JobDescriptor, exclusive: bool) -> Result<JobDescriptor> {
        self.mutate(|st| {
            if exclusive {
                if let Some(active) = st.jobs.values().find(|j| {
                    j.speech_id == job.speech_id && j.kind == job.kind && !j.status.is_terminal()
                }) {
                    return Err(Error::Conflict(format!(
                        "speech '{}' already has {} job '{}' {}",
                        job.speech_id, active.kind, active.job_id, active.status
                    )));
                }
            }
            job.job_id = format!("job-{:06}", st.jobs.len() + 1);
            let id = job.job_id.clone();
            st.jobs.insert(id.clone(), job.clone());
            Ok((job, vec![Persist::Job(id)]))
        })
    }

    /// Replaces a job's descriptor. Jobs in a terminal state never change.
    pub fn update_job(&self, job: JobDescriptor) -> Result<()> {
        self.mutate(|st| {
            let old = st.jobs.get(&job.job_id).ok_or_else(|| Error::not_found("job", job.job_id.clone()))?;
            if old.status.is_terminal() {
                return Err(Error::Conflict(format!("job '{}' is {} and cannot change", job.job_id, old.status)));
            }
            let id = job.job_id.clone();
            st.jobs.insert(id.clone(), job);
            Ok(((), vec![Persist::Job(id)]))
        })
    }

    pub fn get_job(&self, id: &str) -> Result<JobDescriptor> {
        self.read().jobs.get(id).cloned().ok_or_else(|| Error::not_found("job", id))
    }

    pub fn jobs(&self) -> Vec<JobDescriptor> {
        self.read().jobs.values().cloned().collect()
    }

    // Idempotency.

    pub fn idempotent_response(&self, key: &str) -> Option<IdempotentResponse> {
        self.read().idempotency.get(key).cloned()
    }

    pub fn put_idempotent_response(&self, r: IdempotentResponse) -> Result<()> {
        self.mutate(|st| {
            let key = r.key.clone();
            st.idempotency.insert(key.clone(), r);
            Ok(((), vec![Persist::Idempotency(key)]))
        })
    }

    // Bundles.

    /// Writes the whole store as a bundle directory. The target must not
    /// exist or be empty.
    pub fn export_bundle(&self, dir: &Path) -> Result<BundleInfo> {
        if dir.exists() && fs::read_dir(dir).map_err(|e| Error::io(format!("listing {}", dir.display()), e))?.next().is_some() {
            return Err(Error::Conflict(format!("export target {} is not empty", dir.display())));
        }
        let st = self.read();
        let info = BundleInfo {
            schema_version: SCHEMA_VERSION,
            format: BUNDLE_FORMAT.into(),
            speeches: st.speeches.len(),
            annotations: st.annotations.values().map(BTreeMap::len).sum(),
            queue_entries: st.queue.values().map(BTreeSet::len).sum(),
            decisions: st.decisions.values().map(Vec::len).sum(),
            validated_sets: st.validated.values().map(Vec::len).sum(),
        };
        write_json(&dir.join("bundle.json"), &info)?;
        write_json_array(&dir.join("leaders.json"), st.leaders.values())?;
        write_json_array(&dir.join("reviewers.json"), st.reviewers.values())?;
        let manifest: Vec<_> = st.speeches.values().map(Speech::manifest).collect();
        write_json_array(&dir.join("manifest.json"), manifest.iter())?;
        for s in st.speeches.values() {
            write_atomic(&dir.join("speeches").join(format!("{}.txt", s.id)), s.body().as_bytes())?;
            write_json(&dir.join("speeches").join(format!("{}.json", s.id)), s)?;
        }
        for (sid, m) in &st.annotations {
            write_jsonl(&dir.join("annotations").join(format!("{sid}.jsonl")), m.values())?;
        }
        for (sid, q) in &st.queue {
            write_jsonl(&dir.join("queue").join(format!("{sid}.jsonl")), q.iter())?;
        }
        for (sid, d) in &st.decisions {
            write_jsonl(&dir.join("decisions").join(format!("{sid}.jsonl")), d.iter())?;
        }
        for (sid, versions) in &st.validated {
            for v in versions {
                write_json(&dir.join("validated").join(sid).join(format!("v{:04}.json", v.version)), v)?;
            }
        }
        Ok(info)
    }

    /// Loads a bundle into this store, which must hold no speeches yet.
    pub fn import_bundle(&self, dir: &Path) -> Result<BundleInfo> {
        let info: BundleInfo = read_json(&dir.join("bundle.json"))?;
        if info.format != BUNDLE_FORMAT {
            return Err(Error::Validation(format!("{} is not a {BUNDLE_FORMAT}", dir.display())));
        }
        let leaders: Vec<Leader> = read_json_array(&dir.join("leaders.json"))?;
        let reviewers: Vec<Reviewer> = read_json_array(&dir.join("reviewers.json"))?;
        let mut speeches = Vec::new();
        for p in record_files(&dir.join("speeches"), "json")? {
            speeches.push(read_json::<Speech>(&p)?);
        }
        let mut annotations = Vec::new();
        for p in record_files(&dir.join("annotations"), "jsonl")? {
            annotations.extend(read_jsonl::<RawAnnotation>(&p)?);
        }
        let mut queue = Vec::new();
        for p in record_files(&dir.join("queue"), "jsonl")? {
            queue.extend(read_jsonl::<QueueEntry>(&p)?);
        }
        let mut decisions = Vec::new();
        for p in record_files(&dir.join("decisions"), "jsonl")? {
            decisions.extend(read_jsonl::<ReviewDecision>(&p)?);
        }
        let mut validated = Vec::new();
        for d in subdirs(&dir.join("validated"))? {
            for p in record_files(&d, "json")? {
                validated.push(read_json::<ValidatedSet>(&p)?);
            }
        }
        validated.sort_by(|a, b| (&a.speech_id, a.version).cmp(&(&b.speech_id, b.version)));

        if !self.read().speeches.is_empty() {
            return Err(Error::Conflict("import target store already holds speeches".into()));
        }
        for l in leaders {
            self.put_leader(l)?;
        }
        for r in reviewers {
            self.put_reviewer(r)?;
        }
        for s in speeches {
            self.insert_speech(s)?;
        }
        self.put_annotations(&annotations)?;
        self.add_queue_entries(queue)?;
        self.append_decisions(decisions)?;
        for v in validated {
            self.append_validated(v)?;
        }
        Ok(info)
    }
}

fn write_json_array<'a, T: Serialize + 'a>(path: &Path, records: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let arr: Vec<Value> = records.into_iter().map(with_version).collect();
    let mut bytes = serde_json::to_vec_pretty(&arr).expect("records serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json_array<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let arr: Vec<Value> =
        serde_json::from_str(&read_text(path)?).map_err(|e| Error::json(format!("parsing {}", path.display()), e))?;
    arr.into_iter().map(|v| from_versioned(v, path)).collect()
}

/// The `bundle.json` header of an exported bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleInfo {
    pub schema_version: u32,
    pub format: String,
    pub speeches: usize,
    pub annotations: usize,
    pub queue_entries: usize,
    pub decisions: usize,
    pub validated_sets: usize,
}

/// A file to (re)write after a mutation.
enum Persist {
    Leader(String),
    Reviewer(String),
    Speech(String),
    Annotations(String),
    Queue(String),
    Decisions(String),
    Validated(String, u32),
    Job(String),
    Idempotency(String),
}

impl Persist {
    fn render(&self, root: &Path, st: &State) -> (PathBuf, Vec<u8>) {
        match self {
            Persist::Leader(id) => (root.join("leaders").join(format!("{id}.json")), json_bytes(&st.leaders[id])),
            Persist::Reviewer(id) => (root.join("reviewers").join(format!("{id}.json")), json_bytes(&st.reviewers[id])),
            Persist::Speech(id) => (root.join("speeches").join(format!("{id}.json")), json_bytes(&st.speeches[id])),
            Persist::Annotations(id) => {
                (root.join("annotations").join(format!("{id}.jsonl")), jsonl_bytes(st.annotations[id].values()))
            }
            Persist::Queue(id) => (root.join("queue").join(format!("{id}.jsonl")), jsonl_bytes(st.queue[id].iter())),
            Persist::Decisions(id) => {
                (root.join("decisions").join(format!("{id}.jsonl")), jsonl_bytes(st.decisions[id].iter()))
            }
            Persist::Validated(id, version) => {
                let set = st.validated[id].iter().find(|v| v.version == *version).expect("just appended");
                (root.join("validated").join(id).join(format!("v{version:04}.json")), json_bytes(set))
            }
            Persist::Job(id) => (root.join("jobs").join(format!("{id}.json")), json_bytes(&st.jobs[id])),
            Persist::Idempotency(key) => {
                let name = crate::corpus::sha256_hex(key);
                (root.join("idempotency").join(format!("{name}.json")), json_bytes(&st.idempotency[key]))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{SpeechKind, SpeechManifest};

    fn leader() -> Leader {
        Leader {
            id: "tsipras".into(),
            full_name: "Alexis Tsipras".into(),
            role_description: "the leader of SYRIZA".into(),
            party: "SYRIZA".into(),
            aliases: vec![],
        }
    }

    fn speech(id: &str, period: ElectionPeriod) -> Speech {
        Speech::from_manifest(
            SpeechManifest {
                id: id.into(),
                leader_id: "tsipras".into(),
                date: "2023-05-10".parse().unwrap(),
                election_period: period,
                venue: "Athens".into(),
                source: "test".into(),
                original_language: "en".into(),
                kind: SpeechKind::CampaignSpeech,
                duration_minutes: None,
            },
            "One.\n\nTwo words.",
        )
        .unwrap()
    }

    #[test]
    fn put_get_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.put_leader(leader()).unwrap();
        let s = speech("a1", ElectionPeriod::First);
        store.insert_speech(s.clone()).unwrap();
        assert_eq!(store.get_speech("a1").unwrap(), s);
        assert!(matches!(store.insert_speech(s.clone()), Err(Error::Conflict(_))));
        drop(store);
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.get_speech("a1").unwrap(), s);
        assert!(matches!(store.get_speech("zz"), Err(Error::NotFound { .. })));
    }

    #[test]
    fn unknown_leader_and_bad_ids_rejected() {
        let store = Store::in_memory();
        assert!(matches!(store.insert_speech(speech("a1", ElectionPeriod::First)), Err(Error::NotFound { .. })));
        store.put_leader(leader()).unwrap();
        assert!(matches!(store.insert_speech(speech("../x", ElectionPeriod::First)), Err(Error::Validation(_))));
    }

    #[test]
    fn filters() {
        let store = Store::in_memory();
        store.put_leader(leader()).unwrap();
        store.insert_speech(speech("a1", ElectionPeriod::First)).unwrap();
        store.insert_speech(speech("a2", ElectionPeriod::Second)).unwrap();
        let f = SpeechFilter { period: Some(ElectionPeriod::Second), ..Default::default() };
        let ids: Vec<_> = store.list_speeches(&f).into_iter().map(|s| s.id).collect();
        assert_eq!(ids, ["a2"]);
        let f = SpeechFilter { leader: Some("nobody".into()), ..Default::default() };
        assert!(store.list_speeches(&f).is_empty());
    }

    #[test]
    fn torn_temp_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.put_leader(leader()).unwrap();
        store.insert_speech(speech("a1", ElectionPeriod::First)).unwrap();
        drop(store);
        // A writer that died mid-write leaves only its temp file behind.
        fs::write(dir.path().join("speeches").join(".tmp-crashed"), b"{\"schema_version\": 1, \"id\": \"a1\", \"para").unwrap();
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.list_speeches(&SpeechFilter::default()).len(), 1);
        assert_eq!(store.get_speech("a1").unwrap(), speech("a1", ElectionPeriod::First));
    }

    #[test]
    fn schema_version_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        store.put_leader(leader()).unwrap();
        drop(store);
        let p = dir.path().join("leaders").join("tsipras.json");
        let text = fs::read_to_string(&p).unwrap().replace("\"schema_version\": 1", "\"schema_version\": 7");
        fs::write(&p, text).unwrap();
        match Store::open(dir.path()) {
            Err(Error::SchemaVersion { found: 7, expected: 1, .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected schema version error"),
        }
    }

    #[test]
    fn validated_versions_are_append_only() {
        let store = Store::in_memory();
        store.put_leader(leader()).unwrap();
        store.insert_speech(speech("a1", ElectionPeriod::First)).unwrap();
        let set = |version| ValidatedSet {
            schema_version: 1,
            speech_id: "a1".into(),
            version,
            finalized_at: "2023-06-01T00:00:00Z".parse().unwrap(),
            entries: vec![],
        };
        store.append_validated(set(1)).unwrap();
        assert!(matches!(store.append_validated(set(1)), Err(Error::Conflict(_))));
        assert!(matches!(store.append_validated(set(3)), Err(Error::Conflict(_))));
        store.append_validated(set(2)).unwrap();
        assert_eq!(store.validated_versions("a1"), vec![1, 2]);
        assert_eq!(store.validated_version("a1", 1).unwrap(), set(1));
    }
}
