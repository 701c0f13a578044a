//! Speeches, paragraph segmentation and translation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::provider::{ProviderError, RetryPolicy};

/// Speeches shorter than this are normally excluded from the study. Only
/// reported as an advisory at ingestion.
pub const MIN_SPEECH_MINUTES: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("speech body is empty or whitespace only")]
    BlankBody,
    #[error("speech {speech_id}: {message}")]
    InvalidSpeech { speech_id: String, message: String },
    #[error("leader '{0}': role_description must not be empty")]
    MissingRoleDescription(String),
    #[error("'{0}' is not a well-formed language tag")]
    BadLanguageTag(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leader {
    pub id: String,
    pub full_name: String,
    /// Injected verbatim into stance and topic prompts.
    pub role_description: String,
    pub party: String,
    /// Extra spellings that must never appear in identity-free prompts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

impl Leader {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.role_description.trim().is_empty() {
            return Err(CorpusError::MissingRoleDescription(self.id.clone()));
        }
        Ok(())
    }

    /// Strings that identify this leader: full name, surname, party and aliases.
    pub fn identity_terms(&self) -> Vec<String> {
        let mut terms = vec![self.full_name.clone(), self.party.clone()];
        if let Some(surname) = self.full_name.split_whitespace().last() {
            terms.push(surname.to_string());
        }
        terms.extend(self.aliases.iter().cloned());
        terms.retain(|t| !t.trim().is_empty());
        terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectionPeriod {
    First,
    Second,
}

impl ElectionPeriod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::First => "first",
            Self::Second => "second",
        }
    }
}

impl fmt::Display for ElectionPeriod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ElectionPeriod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first" => Ok(Self::First),
            "second" => Ok(Self::Second),
            other => Err(format!("unknown election period '{other}' (expected first|second)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeechKind {
    CampaignSpeech,
    /// Opening remarks at press conferences. Kept, but flagged as not
    /// comparable with campaign speeches.
    PressConferenceRemarks,
}

/// One record of a corpus bundle's `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechManifest {
    pub id: String,
    pub leader_id: String,
    pub date: NaiveDate,
    pub election_period: ElectionPeriod,
    pub venue: String,
    pub source: String,
    pub original_language: String,
    pub kind: SpeechKind,
    #[serde(default)]
    pub duration_minutes: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub index: usize,
    pub original_text: String,
    #[serde(default)]
    pub translated_text: Option<String>,
    pub word_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationState {
    pub provider: String,
    pub target_language: String,
    /// Paragraph indices still lacking a translation.
    #[serde(default)]
    pub untranslated: Vec<usize>,
}

impl TranslationState {
    pub fn is_complete(&self) -> bool {
        self.untranslated.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speech {
    pub id: String,
    pub leader_id: String,
    pub date: NaiveDate,
    pub election_period: ElectionPeriod,
    pub venue: String,
    pub source: String,
    pub original_language: String,
    pub kind: SpeechKind,
    #[serde(default)]
    pub duration_minutes: Option<f64>,
    pub paragraphs: Vec<Paragraph>,
    #[serde(default)]
    pub translation: Option<TranslationState>,
}

impl Speech {
    /// Builds a speech from its manifest record and raw text, segmenting the
    /// body into paragraphs.
    pub fn from_manifest(manifest: SpeechManifest, body: &str) -> Result<Self, CorpusError> {
        validate_language_tag(&manifest.original_language)?;
        if manifest.id.trim().is_empty() {
            return Err(CorpusError::InvalidSpeech {
                speech_id: manifest.id,
                message: "id must not be empty".into(),
            });
        }
        if let Some(d) = manifest.duration_minutes {
            if !(d > 0.0) {
                return Err(CorpusError::InvalidSpeech {
                    speech_id: manifest.id,
                    message: format!("duration_minutes must be positive (got {d})"),
                });
            }
        }
        let paragraphs = segment(body)?
            .into_iter()
            .enumerate()
            .map(|(index, text)| Paragraph {
                index,
                word_count: word_count(&text),
                original_text: text,
                translated_text: None,
            })
            .collect();
        Ok(Speech {
            id: manifest.id,
            leader_id: manifest.leader_id,
            date: manifest.date,
            election_period: manifest.election_period,
            venue: manifest.venue,
            source: manifest.source,
            original_language: manifest.original_language,
            kind: manifest.kind,
            duration_minutes: manifest.duration_minutes,
            paragraphs,
            translation: None,
        })
    }

    pub fn manifest(&self) -> SpeechManifest {
        SpeechManifest {
            id: self.id.clone(),
            leader_id: self.leader_id.clone(),
            date: self.date,
            election_period: self.election_period,
            venue: self.venue.clone(),
            source: self.source.clone(),
            original_language: self.original_language.clone(),
            kind: self.kind,
            duration_minutes: self.duration_minutes,
        }
    }

    /// Checks the structural invariants of a stored speech.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |message: String| CorpusError::InvalidSpeech { speech_id: self.id.clone(), message };
        if self.paragraphs.is_empty() {
            return Err(bad("speech has no paragraphs".into()));
        }
        for (i, p) in self.paragraphs.iter().enumerate() {
            if p.index != i {
                return Err(bad(format!("paragraph indices must be contiguous from 0 (found {} at {i})", p.index)));
            }
            if p.original_text.trim().is_empty() {
                return Err(bad(format!("paragraph {i} is blank")));
            }
            if p.word_count != word_count(&p.original_text) {
                return Err(bad(format!("paragraph {i} word_count does not match its text")));
            }
        }
        Ok(())
    }

    /// Press-conference remarks are kept but are not comparable with
    /// campaign speeches.
    pub fn is_comparable(&self) -> bool {
        self.kind == SpeechKind::CampaignSpeech
    }

    /// Corpus-policy advisories; never a reason to reject.
    pub fn advisories(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(d) = self.duration_minutes {
            if d < MIN_SPEECH_MINUTES {
                out.push(format!(
                    "speech {} lasts {d} minutes, under the {MIN_SPEECH_MINUTES}-minute inclusion rule",
                    self.id
                ));
            }
        }
        if !self.is_comparable() {
            out.push(format!(
                "speech {} is press-conference remarks and is not comparable with campaign speeches",
                self.id
            ));
        }
        out
    }

    pub fn total_words(&self) -> usize {
        self.paragraphs.iter().map(|p| p.word_count).sum()
    }

    pub fn is_translated(&self) -> bool {
        self.paragraphs.iter().all(|p| p.translated_text.is_some())
    }

    /// The text a model should read for a paragraph: the translation, or the
    /// original when `monolingual` is set.
    pub fn working_text(&self, index: usize, monolingual: bool) -> Option<&str> {
        let p = self.paragraphs.get(index)?;
        match (&p.translated_text, monolingual) {
            (Some(t), _) => Some(t),
            (None, true) => Some(&p.original_text),
            (None, false) => None,
        }
    }

    /// Original text as paragraphs separated by a blank line.
    pub fn body(&self) -> String {
        let mut out = self
            .paragraphs
            .iter()
            .map(|p| p.original_text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        out.push('\n');
        out
    }
}

/// Splits a raw speech body into paragraphs. Paragraphs are separated by one
/// or more blank (whitespace-only) lines; single newlines stay inside a
/// paragraph. Segments are trimmed and empty ones are dropped.
pub fn segment(body: &str) -> Result<Vec<String>, CorpusError> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    let mut flush = |current: &mut Vec<&str>| {
        if !current.is_empty() {
            let text = current.join("\n");
            let text = text.trim();
            if !text.is_empty() {
                out.push(text.to_string());
            }
            current.clear();
        }
    };
    for line in body.split('\n') {
        if line.trim().is_empty() {
            flush(&mut current);
        } else {
            current.push(line);
        }
    }
    flush(&mut current);
    if out.is_empty() {
        return Err(CorpusError::BlankBody);
    }
    Ok(out)
}

/// Whitespace-delimited token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Loose BCP-47 shape check: a 2-3 letter primary subtag followed by
/// alphanumeric subtags of 1-8 characters.
pub fn validate_language_tag(tag: &str) -> Result<(), CorpusError> {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or("");
    let primary_ok = (2..=3).contains(&primary.len()) && primary.chars().all(|c| c.is_ascii_alphabetic());
    let rest_ok = parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()));
    if primary_ok && rest_ok {
        Ok(())
    } else {
        Err(CorpusError::BadLanguageTag(tag.to_string()))
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// A machine translation service.
pub trait TranslationProvider: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError>;
}

/// Returns its input. Only valid when source and target languages agree.
#[derive(Debug, Default)]
pub struct IdentityTranslator {
    calls: AtomicUsize,
}

impl IdentityTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TranslationProvider for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, source: &str, target: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if !source.eq_ignore_ascii_case(target) {
            return Err(ProviderError::Fatal(format!(
                "identity translator cannot translate {source} to {target}"
            )));
        }
        Ok(text.to_string())
    }
}

/// Looks translations up in a fixed table, failing on unknown text. Used
/// with pre-translated corpora and in tests.
#[derive(Debug, Default)]
pub struct DictionaryTranslator {
    name: String,
    table: HashMap<String, String>,
    calls: AtomicUsize,
}

impl DictionaryTranslator {
    pub fn new(name: impl Into<String>, table: HashMap<String, String>) -> Self {
        Self { name: name.into(), table, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl TranslationProvider for DictionaryTranslator {
    fn name(&self) -> &str {
        &self.name
    }

    fn translate(&self, text: &str, _source: &str, _target: &str) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| ProviderError::Fatal(format!("no translation for '{text}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TranslationKey {
    pub provider: String,
    pub source_sha256: String,
    pub target: String,
}

impl TranslationKey {
    pub fn new(provider: &str, source_text: &str, target: &str) -> Self {
        Self {
            provider: provider.to_string(),
            source_sha256: sha256_hex(source_text),
            target: target.to_string(),
        }
    }

    /// Stable file-name-safe digest of the whole key.
    pub fn digest(&self) -> String {
        sha256_hex(&format!("{}\u{1f}{}\u{1f}{}", self.provider, self.source_sha256, self.target))
    }
}

/// Cache of completed translations. Implementations must tolerate
/// concurrent readers and writers.
pub trait TranslationCache: Send + Sync {
    fn get(&self, key: &TranslationKey) -> Option<String>;
    fn put(&self, key: &TranslationKey, translation: &str) -> crate::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryTranslationCache {
    entries: RwLock<HashMap<TranslationKey, String>>,
}

impl TranslationCache for MemoryTranslationCache {
    fn get(&self, key: &TranslationKey) -> Option<String> {
        self.entries.read().expect("cache poisoned").get(key).cloned()
    }

    fn put(&self, key: &TranslationKey, translation: &str) -> crate::Result<()> {
        self.entries
            .write()
            .expect("cache poisoned")
            .insert(key.clone(), translation.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TranslationOptions {
    pub target: String,
    pub retry: RetryPolicy,
    pub parallelism: usize,
}

impl TranslationOptions {
    pub fn new(target: impl Into<String>) -> Self {
        Self { target: target.into(), retry: RetryPolicy::default(), parallelism: 4 }
    }
}

/// Translates every paragraph, consulting the cache first. Returns a new
/// speech; the original texts are never touched. Paragraphs whose
/// translation failed after the retry budget are listed in
/// `translation.untranslated`.
pub fn translate_speech(
    speech: &Speech,
    provider: &dyn TranslationProvider,
    cache: &dyn TranslationCache,
    options: &TranslationOptions,
) -> crate::Result<Speech> {
    validate_language_tag(&options.target)?;
    let n = speech.paragraphs.len();
    let results: Mutex<Vec<Option<String>>> = Mutex::new(vec![None; n]);
    let errors: Mutex<Vec<crate::Error>> = Mutex::new(Vec::new());
    let next = AtomicUsize::new(0);
    let workers = options.parallelism.clamp(1, n.max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let paragraph = &speech.paragraphs[i];
                let key = TranslationKey::new(provider.name(), &paragraph.original_text, &options.target);
                let translated = match cache.get(&key) {
                    Some(hit) => Some(hit),
                    None => match options.retry.run(|| {
                        provider.translate(&paragraph.original_text, &speech.original_language, &options.target)
                    }) {
                        Ok(text) => {
                            if let Err(err) = cache.put(&key, &text) {
                                errors.lock().expect("poisoned").push(err);
                            }
                            Some(text)
                        }
                        Err(err) => {
                            tracing::warn!(speech = %speech.id, paragraph = i, %err, "translation failed");
                            None
                        }
                    },
                };
                results.lock().expect("poisoned")[i] = translated;
            });
        }
    });

    if let Some(err) = errors.into_inner().expect("poisoned").into_iter().next() {
        return Err(err);
    }
    let results = results.into_inner().expect("poisoned");
    let mut out = speech.clone();
    let mut untranslated = Vec::new();
    for (p, t) in out.paragraphs.iter_mut().zip(results) {
        match t {
            Some(text) => p.translated_text = Some(text),
            None => untranslated.push(p.index),
        }
    }
    out.translation = Some(TranslationState {
        provider: provider.name().to_string(),
        target_language: options.target.clone(),
        untranslated,
    });
    Ok(out)
}
