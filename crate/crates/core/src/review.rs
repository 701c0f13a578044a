//! Human validation: reviewer assignment, decision checking, disagreement
//! resolution, the correction policy and finalization.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::classify::{BandConfig, IntensityBand, SentimentBand};
use crate::prompting::{AnnotationTask, AnnotationValue, Entity, RawAnnotation, Stance, TopicTaxonomy};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewerRole {
    Journalist,
    PoliticalScientist,
    Admin,
}

impl ReviewerRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Journalist => "journalist",
            Self::PoliticalScientist => "political_scientist",
            Self::Admin => "admin",
        }
    }
}

impl fmt::Display for ReviewerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reviewer {
    pub id: String,
    pub display_name: String,
    pub role: ReviewerRole,
}

/// Identifies one machine annotation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnotationRef {
    pub speech_id: String,
    pub paragraph_index: usize,
    pub task: AnnotationTask,
}

impl AnnotationRef {
    pub fn new(speech_id: impl Into<String>, paragraph_index: usize, task: AnnotationTask) -> Self {
        Self { speech_id: speech_id.into(), paragraph_index, task }
    }

    pub fn of(a: &RawAnnotation) -> Self {
        Self::new(a.speech_id.clone(), a.paragraph_index, a.task())
    }
}

impl fmt::Display for AnnotationRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}/{}", self.speech_id, self.paragraph_index, self.task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Correct,
}

fn schema_version_default() -> u32 {
    SCHEMA_VERSION
}

/// One reviewer's verdict on one annotation. `corrected_value` holds the
/// human judgment in its wire form: a band name for score tasks, a label or
/// topic id for stance/topic, an entity list for NER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    #[serde(default = "schema_version_default")]
    pub schema_version: u32,
    pub speech_id: String,
    pub paragraph_index: usize,
    pub task: AnnotationTask,
    pub reviewer_id: String,
    pub verdict: Verdict,
    pub submitted_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corrected_value: Option<Value>,
}

impl ReviewDecision {
    pub fn target(&self) -> AnnotationRef {
        AnnotationRef::new(self.speech_id.clone(), self.paragraph_index, self.task)
    }
}

/// A human judgment in typed form.
#[derive(Debug, Clone, PartialEq)]
pub enum Judgment {
    Stance(Stance),
    Topic(String),
    Sentiment(SentimentBand),
    Intensity(IntensityBand),
    Ner(Vec<Entity>),
}

impl Judgment {
    pub fn category(&self) -> String {
        match self {
            Judgment::Stance(s) => s.as_str().to_string(),
            Judgment::Topic(t) => t.clone(),
            Judgment::Sentiment(b) => b.as_str().to_string(),
            Judgment::Intensity(b) => b.as_str().to_string(),
            Judgment::Ner(e) => ner_category(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Ruling {
    Accept,
    Correct(Judgment),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ReviewError {
    #[error("{task} needs {required} {role} reviewer(s) but {available} are registered")]
    InsufficientReviewers { task: AnnotationTask, role: ReviewerRole, required: usize, available: usize },
    #[error("unknown reviewer '{0}'")]
    UnknownReviewer(String),
    #[error("reviewer '{reviewer_id}' is not assigned to {target}")]
    NotAssigned { reviewer_id: String, target: AnnotationRef },
    #[error("verdict 'correct' on {0} requires corrected_value")]
    MissingCorrection(AnnotationRef),
    #[error("verdict 'accept' on {0} must not carry corrected_value")]
    UnexpectedCorrection(AnnotationRef),
    #[error("corrected_value for {target} is invalid: {message}")]
    InvalidCorrection { target: AnnotationRef, message: String },
    #[error("correction for {target} repeats the machine's category '{category}'")]
    NoChange { target: AnnotationRef, category: String },
    #[error("schema_version {0} is not supported")]
    SchemaVersion(u32),
    #[error("{} review entries pending, {} escalated", pending.len(), escalated.len())]
    NotReady { pending: Vec<AnnotationRef>, escalated: Vec<AnnotationRef> },
}

/// How many reviewers of which role each task needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentPolicy {
    pub requirements: BTreeMap<AnnotationTask, Vec<RoleQuota>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleQuota {
    pub role: ReviewerRole,
    pub count: usize,
}

impl Default for AssignmentPolicy {
    fn default() -> Self {
        use AnnotationTask::*;
        let q = |role, count| RoleQuota { role, count };
        let two_journalists = vec![q(ReviewerRole::Journalist, 2)];
        let mixed = vec![q(ReviewerRole::Journalist, 1), q(ReviewerRole::PoliticalScientist, 1)];
        let requirements = BTreeMap::from([
            (Stance, two_journalists.clone()),
            (Topic, two_journalists),
            (Sentiment, mixed.clone()),
            (Polarization, mixed.clone()),
            (Populism, mixed),
            (Ner, vec![q(ReviewerRole::Journalist, 1)]),
        ]);
        Self { requirements }
    }
}

impl AssignmentPolicy {
    pub fn reviewers_per_entry(&self, task: AnnotationTask) -> usize {
        self.requirements.get(&task).map_or(0, |qs| qs.iter().map(|q| q.count).sum())
    }

    /// Picks reviewers for one annotation. Within each role the pool is
    /// sorted by id and rotated by the paragraph index, which spreads work
    /// evenly and makes the assignment reproducible.
    pub fn assign(&self, target: &AnnotationRef, reviewers: &[Reviewer]) -> Result<Vec<String>, ReviewError> {
        let mut out = Vec::new();
        for quota in self.requirements.get(&target.task).into_iter().flatten() {
            let mut pool: Vec<&str> =
                reviewers.iter().filter(|r| r.role == quota.role).map(|r| r.id.as_str()).collect();
            pool.sort_unstable();
            pool.dedup();
            if pool.len() < quota.count {
                return Err(ReviewError::InsufficientReviewers {
                    task: target.task,
                    role: quota.role,
                    required: quota.count,
                    available: pool.len(),
                });
            }
            for j in 0..quota.count {
                out.push(pool[(target.paragraph_index + j) % pool.len()].to_string());
            }
        }
        Ok(out)
    }
}

/// One reviewer's assignment to one annotation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueueEntry {
    pub schema_version: u32,
    pub speech_id: String,
    pub paragraph_index: usize,
    pub task: AnnotationTask,
    pub reviewer_id: String,
}

impl QueueEntry {
    pub fn target(&self) -> AnnotationRef {
        AnnotationRef::new(self.speech_id.clone(), self.paragraph_index, self.task)
    }
}

/// Builds queue entries for `targets` under `policy`. Fails without
/// producing anything if any task lacks enough registered reviewers.
pub fn enqueue_reviews(
    targets: &[AnnotationRef],
    reviewers: &[Reviewer],
    policy: &AssignmentPolicy,
) -> Result<Vec<QueueEntry>, ReviewError> {
    let mut out = Vec::new();
    for t in targets {
        for reviewer_id in policy.assign(t, reviewers)? {
            out.push(QueueEntry {
                schema_version: SCHEMA_VERSION,
                speech_id: t.speech_id.clone(),
                paragraph_index: t.paragraph_index,
                task: t.task,
                reviewer_id,
            });
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// The category a machine value falls into: the band for scores, the label
/// otherwise.
pub fn machine_category(value: &AnnotationValue, bands: &BandConfig) -> Result<String, crate::classify::BandError> {
    Ok(match value {
        AnnotationValue::Stance(s) => s.as_str().to_string(),
        AnnotationValue::Topic(t) => t.clone(),
        AnnotationValue::Sentiment(v) => bands.sentiment_band(*v)?.as_str().to_string(),
        AnnotationValue::Polarization(v) | AnnotationValue::Populism(v) => bands.intensity_band(*v)?.as_str().to_string(),
        AnnotationValue::Ner(e) => ner_category(e),
    })
}

/// Accuracy category of an entity list: its most frequent entity type
/// (ties to the alphabetically first), or `none` for an empty list.
pub fn ner_category(entities: &[Entity]) -> String {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entities {
        *counts.entry(e.entity_type.as_str()).or_default() += 1;
    }
    let best = counts.values().copied().max().unwrap_or(0);
    counts.into_iter().find(|(_, c)| *c == best).map_or_else(|| "none".to_string(), |(t, _)| t.to_string())
}

/// Checks a decision against the machine annotation it judges and returns
/// the typed ruling it expresses.
pub fn check_decision(
    decision: &ReviewDecision,
    machine: &AnnotationValue,
    taxonomy: &TopicTaxonomy,
    bands: &BandConfig,
) -> Result<Ruling, ReviewError> {
    let target = decision.target();
    if decision.schema_version != SCHEMA_VERSION {
        return Err(ReviewError::SchemaVersion(decision.schema_version));
    }
    let value = match (decision.verdict, &decision.corrected_value) {
        (Verdict::Accept, None) => return Ok(Ruling::Accept),
        (Verdict::Accept, Some(_)) => return Err(ReviewError::UnexpectedCorrection(target)),
        (Verdict::Correct, None) | (Verdict::Correct, Some(Value::Null)) => {
            return Err(ReviewError::MissingCorrection(target))
        }
        (Verdict::Correct, Some(v)) => v,
    };
    let invalid = |message: String| ReviewError::InvalidCorrection { target: target.clone(), message };
    let as_str = || value.as_str().ok_or_else(|| invalid(format!("expected a string, got {value}")));
    let judgment = match decision.task {
        AnnotationTask::Stance => Judgment::Stance(
            serde_json::from_value(value.clone())
                .map_err(|_| invalid("expected \"criticism\" or \"political_agenda\"".into()))?,
        ),
        AnnotationTask::Topic => {
            let id = as_str()?;
            if !taxonomy.contains(id) {
                return Err(invalid(format!("'{id}' is not a configured topic id")));
            }
            Judgment::Topic(id.to_string())
        }
        AnnotationTask::Sentiment => Judgment::Sentiment(as_str()?.parse().map_err(|e: crate::classify::BandError| invalid(e.to_string()))?),
        AnnotationTask::Polarization | AnnotationTask::Populism => {
            Judgment::Intensity(as_str()?.parse().map_err(|e: crate::classify::BandError| invalid(e.to_string()))?)
        }
        AnnotationTask::Ner => {
            let entities: Vec<Entity> =
                serde_json::from_value(value.clone()).map_err(|e| invalid(format!("entity list: {e}")))?;
            if entities.iter().any(|e| e.surface.trim().is_empty()) {
                return Err(invalid("entity with empty surface".into()));
            }
            Judgment::Ner(entities)
        }
    };
    if machine.task() != decision.task {
        return Err(invalid(format!("annotation is a {} value", machine.task())));
    }
    let unchanged = match (&judgment, machine) {
        (Judgment::Ner(e), AnnotationValue::Ner(m)) => e == m,
        _ => machine_category(machine, bands).map_err(|e| invalid(e.to_string()))? == judgment.category(),
    };
    if unchanged {
        return Err(ReviewError::NoChange { target, category: judgment.category() });
    }
    Ok(Ruling::Correct(judgment))
}

/// Where one annotation stands in the review process.
#[derive(Debug, Clone, PartialEq)]
pub enum Resolution {
    /// Assigned reviewers who have not submitted yet.
    Pending { waiting_on: Vec<String> },
    /// Reviewers disagree; only an admin decision can settle it.
    Escalated,
    Resolved { ruling: Ruling, by_admin: bool },
}

/// Resolves the decisions on one annotation, given in log order. The latest
/// admin decision is final. Otherwise each assigned reviewer's latest
/// decision counts, and they must all agree.
pub fn resolve(
    assigned: &[String],
    decisions: &[(ReviewerRole, &ReviewDecision, Ruling)],
) -> Resolution {
    if let Some((_, _, ruling)) = decisions.iter().rev().find(|(role, _, _)| *role == ReviewerRole::Admin) {
        return Resolution::Resolved { ruling: ruling.clone(), by_admin: true };
    }
    if assigned.is_empty() {
        return Resolution::Pending { waiting_on: Vec::new() };
    }
    let mut latest: HashMap<&str, &Ruling> = HashMap::new();
    for (_, d, ruling) in decisions {
        latest.insert(d.reviewer_id.as_str(), ruling);
    }
    let waiting_on: Vec<String> = assigned.iter().filter(|r| !latest.contains_key(r.as_str())).cloned().collect();
    if !waiting_on.is_empty() {
        return Resolution::Pending { waiting_on };
    }
    let rulings: Vec<&Ruling> = assigned.iter().map(|r| latest[r.as_str()]).collect();
    if rulings.windows(2).all(|w| w[0] == w[1]) {
        Resolution::Resolved { ruling: rulings[0].clone(), by_admin: false }
    } else {
        Resolution::Escalated
    }
}

/// The value downstream analytics see. `None` is the missing marker.
pub fn apply_correction_policy(
    machine: &AnnotationValue,
    ruling: &Ruling,
    bands: &BandConfig,
) -> Option<AnnotationValue> {
    match ruling {
        Ruling::Accept => Some(machine.clone()),
        Ruling::Correct(j) => match (j, machine.task()) {
            (Judgment::Sentiment(_), _) => None,
            (Judgment::Intensity(b), AnnotationTask::Polarization) => {
                Some(AnnotationValue::Polarization(bands.corrective_value(*b)))
            }
            (Judgment::Intensity(b), _) => Some(AnnotationValue::Populism(bands.corrective_value(*b))),
            (Judgment::Stance(s), _) => Some(AnnotationValue::Stance(*s)),
            (Judgment::Topic(t), _) => Some(AnnotationValue::Topic(t.clone())),
            (Judgment::Ner(e), _) => Some(AnnotationValue::Ner(e.clone())),
        },
    }
}

/// A post-policy annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ValidatedWire", try_from = "ValidatedWire")]
pub struct ValidatedAnnotation {
    pub speech_id: String,
    pub paragraph_index: usize,
    pub machine_value: AnnotationValue,
    /// `None` is the missing marker.
    pub final_value: Option<AnnotationValue>,
    pub was_corrected: bool,
    /// The human-final category, used for the accuracy baseline.
    pub human_category: String,
    pub resolved_by_admin: bool,
    pub decisions: Vec<ReviewDecision>,
}

impl ValidatedAnnotation {
    pub fn task(&self) -> AnnotationTask {
        self.machine_value.task()
    }

    pub fn target(&self) -> AnnotationRef {
        AnnotationRef::new(self.speech_id.clone(), self.paragraph_index, self.task())
    }

    pub fn final_score(&self) -> Option<f64> {
        self.final_value.as_ref().and_then(AnnotationValue::score)
    }
}

#[derive(Serialize, Deserialize)]
struct ValidatedWire {
    speech_id: String,
    paragraph_index: usize,
    task: AnnotationTask,
    machine_value: Value,
    final_value: Value,
    was_corrected: bool,
    human_category: String,
    #[serde(default)]
    resolved_by_admin: bool,
    #[serde(default)]
    decisions: Vec<ReviewDecision>,
}

impl From<ValidatedAnnotation> for ValidatedWire {
    fn from(v: ValidatedAnnotation) -> Self {
        Self {
            task: v.task(),
            machine_value: v.machine_value.to_json(),
            final_value: v.final_value.as_ref().map_or(Value::Null, AnnotationValue::to_json),
            speech_id: v.speech_id,
            paragraph_index: v.paragraph_index,
            was_corrected: v.was_corrected,
            human_category: v.human_category,
            resolved_by_admin: v.resolved_by_admin,
            decisions: v.decisions,
        }
    }
}

impl TryFrom<ValidatedWire> for ValidatedAnnotation {
    type Error = String;
    fn try_from(w: ValidatedWire) -> Result<Self, String> {
        let final_value = match &w.final_value {
            Value::Null => None,
            v => Some(AnnotationValue::from_json(w.task, v)?),
        };
        Ok(Self {
            machine_value: AnnotationValue::from_json(w.task, &w.machine_value)?,
            final_value,
            speech_id: w.speech_id,
            paragraph_index: w.paragraph_index,
            was_corrected: w.was_corrected,
            human_category: w.human_category,
            resolved_by_admin: w.resolved_by_admin,
            decisions: w.decisions,
        })
    }
}

/// An immutable, versioned finalization of one speech.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedSet {
    pub schema_version: u32,
    pub speech_id: String,
    pub version: u32,
    pub finalized_at: DateTime<Utc>,
    /// Ordered by (paragraph_index, task).
    pub entries: Vec<ValidatedAnnotation>,
}

impl ValidatedSet {
    /// `speech_id@vN`, as embedded in chart payloads.
    pub fn source_version(&self) -> String {
        format!("{}@v{}", self.speech_id, self.version)
    }

    pub fn get(&self, paragraph_index: usize, task: AnnotationTask) -> Option<&ValidatedAnnotation> {
        self.entries
            .binary_search_by(|e| (e.paragraph_index, e.task()).cmp(&(paragraph_index, task)))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn corrections(&self, task: AnnotationTask) -> usize {
        self.entries.iter().filter(|e| e.task() == task && e.was_corrected).count()
    }
}

/// Everything finalization reads for one speech.
pub struct ReviewState<'a> {
    pub annotations: &'a [RawAnnotation],
    pub queue: &'a [QueueEntry],
    /// Decisions in submission-log order.
    pub decisions: &'a [ReviewDecision],
    pub reviewers: &'a [Reviewer],
    pub taxonomy: &'a TopicTaxonomy,
    pub bands: &'a BandConfig,
}

/// Per-annotation resolution status, in (paragraph, task) order.
pub struct StatusReport {
    pub resolved: Vec<(AnnotationRef, Ruling, bool)>,
    pub pending: Vec<AnnotationRef>,
    pub escalated: Vec<AnnotationRef>,
}

impl ReviewState<'_> {
    pub fn status(&self) -> Result<StatusReport, ReviewError> {
        let role_of: HashMap<&str, ReviewerRole> = self.reviewers.iter().map(|r| (r.id.as_str(), r.role)).collect();
        let mut assigned: HashMap<AnnotationRef, Vec<String>> = HashMap::new();
        for q in self.queue {
            assigned.entry(q.target()).or_default().push(q.reviewer_id.clone());
        }
        let mut by_ref: HashMap<AnnotationRef, Vec<&ReviewDecision>> = HashMap::new();
        for d in self.decisions {
            by_ref.entry(d.target()).or_default().push(d);
        }
        let mut annotations: Vec<&RawAnnotation> = self.annotations.iter().collect();
        annotations.sort_by_key(|a| (a.paragraph_index, a.task()));

        let mut report = StatusReport { resolved: Vec::new(), pending: Vec::new(), escalated: Vec::new() };
        for a in annotations {
            let target = AnnotationRef::of(a);
            let mut checked = Vec::new();
            for d in by_ref.get(&target).into_iter().flatten() {
                let role = *role_of
                    .get(d.reviewer_id.as_str())
                    .ok_or_else(|| ReviewError::UnknownReviewer(d.reviewer_id.clone()))?;
                let ruling = check_decision(d, &a.value, self.taxonomy, self.bands)?;
                checked.push((role, *d, ruling));
            }
            let who = assigned.get(&target).map(Vec::as_slice).unwrap_or(&[]);
            match resolve(who, &checked) {
                Resolution::Resolved { ruling, by_admin } => report.resolved.push((target, ruling, by_admin)),
                Resolution::Pending { .. } => report.pending.push(target),
                Resolution::Escalated => report.escalated.push(target),
            }
        }
        Ok(report)
    }

    /// Applies the correction policy to every annotation. Fails with the
    /// full pending and escalated lists unless everything is resolved.
    pub fn finalize(&self, speech_id: &str, version: u32, finalized_at: DateTime<Utc>) -> Result<ValidatedSet, ReviewError> {
        let report = self.status()?;
        if !report.pending.is_empty() || !report.escalated.is_empty() {
            return Err(ReviewError::NotReady { pending: report.pending, escalated: report.escalated });
        }
        let machine: HashMap<AnnotationRef, &RawAnnotation> =
            self.annotations.iter().map(|a| (AnnotationRef::of(a), a)).collect();
        let mut decisions: HashMap<AnnotationRef, Vec<ReviewDecision>> = HashMap::new();
        for d in self.decisions {
            decisions.entry(d.target()).or_default().push(d.clone());
        }
        let mut entries = Vec::with_capacity(report.resolved.len());
        for (target, ruling, by_admin) in report.resolved {
            let a = machine[&target];
            let human_category = match &ruling {
                Ruling::Accept => machine_category(&a.value, self.bands)
                    .map_err(|e| ReviewError::InvalidCorrection { target: target.clone(), message: e.to_string() })?,
                Ruling::Correct(j) => j.category(),
            };
            entries.push(ValidatedAnnotation {
                speech_id: target.speech_id.clone(),
                paragraph_index: target.paragraph_index,
                final_value: apply_correction_policy(&a.value, &ruling, self.bands),
                machine_value: a.value.clone(),
                was_corrected: ruling != Ruling::Accept,
                human_category,
                resolved_by_admin: by_admin,
                decisions: decisions.remove(&target).unwrap_or_default(),
            });
        }
        Ok(ValidatedSet { schema_version: SCHEMA_VERSION, speech_id: speech_id.to_string(), version, finalized_at, entries })
    }
}

/// References missing from `annotations` for a full (paragraph × task) grid.
pub fn annotation_gaps(
    speech_id: &str,
    paragraphs: usize,
    tasks: &BTreeSet<AnnotationTask>,
    annotations: &[RawAnnotation],
) -> Vec<AnnotationRef> {
    let have: BTreeSet<(usize, AnnotationTask)> = annotations.iter().map(|a| (a.paragraph_index, a.task())).collect();
    let mut out = Vec::new();
    for p in 0..paragraphs {
        for &t in tasks {
            if !have.contains(&(p, t)) {
                out.push(AnnotationRef::new(speech_id, p, t));
            }
        }
    }
    out
}
