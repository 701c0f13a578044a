use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnnotationTask, LlmProvider, PromptBundle, TopicTaxonomy};
use crate::corpus::sha256_hex;
use crate::provider::ProviderError;

/// One line of a stub script: the reply to give for a task and paragraph
/// text (identified by the SHA-256 of the text the model would read).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub task: AnnotationTask,
    pub text_sha256: String,
    pub response: String,
}

/// Deterministic offline provider. Scripted replies win; anything else gets a
/// reply derived from a hash of the task and text.
#[derive(Debug)]
pub struct StubProvider {
    name: String,
    scripted: HashMap<(AnnotationTask, String), String>,
    topic_ids: Vec<String>,
    calls: AtomicU64,
}

impl StubProvider {
    pub fn new(taxonomy: &TopicTaxonomy) -> Self {
        Self {
            name: "stub".into(),
            scripted: HashMap::new(),
            topic_ids: taxonomy.ids().map(str::to_string).collect(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_script(taxonomy: &TopicTaxonomy, replies: impl IntoIterator<Item = ScriptedReply>) -> Self {
        let mut stub = Self::new(taxonomy);
        for r in replies {
            stub.scripted.insert((r.task, r.text_sha256), r.response);
        }
        stub
    }

    /// Loads a JSON-lines script of [`ScriptedReply`] records.
    pub fn from_jsonl(path: &Path, taxonomy: &TopicTaxonomy) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::io(format!("reading {}", path.display()), e))?;
        let mut replies = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r: ScriptedReply = serde_json::from_str(line)
                .map_err(|e| crate::Error::json(format!("{} line {}", path.display(), n + 1), e))?;
            replies.push(r);
        }
        Ok(Self::with_script(taxonomy, replies))
    }

    pub fn script_len(&self) -> usize {
        self.scripted.len()
    }

    fn heuristic(&self, task: AnnotationTask, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(task.as_str().as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        let d = h.finalize();
        let n = u64::from_be_bytes(d[..8].try_into().expect("8 bytes"));
        match task {
            AnnotationTask::Stance => {
                let s = if n % 2 == 0 { "political_agenda" } else { "criticism" };
                format!("{{\"stance\": \"{s}\"}}")
            }
            AnnotationTask::Topic => {
                let id = if self.topic_ids.is_empty() {
                    "other"
                } else {
                    self.topic_ids[(n % self.topic_ids.len() as u64) as usize].as_str()
                };
                serde_json::json!({ "topic": id }).to_string()
            }
            AnnotationTask::Sentiment => {
                let cents = (n % 201) as i64 - 100;
                format!("{{\"score\": {}}}", cents as f64 / 100.0)
            }
            AnnotationTask::Polarization | AnnotationTask::Populism => {
                // Skewed towards low values, like real campaign rhetoric.
                let cents = (n % 101) * (n.rotate_right(17) % 101) / 100;
                format!("{{\"score\": {}}}", cents as f64 / 100.0)
            }
            AnnotationTask::Ner => {
                let words: BTreeSet<&str> = text
                    .split_whitespace()
                    .skip(1)
                    .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
                    .filter(|w| w.len() > 1 && w.chars().all(|c| c.is_uppercase()))
                    .collect();
                let entities: Vec<_> = words
                    .into_iter()
                    .map(|w| serde_json::json!({ "surface": w, "type": "organization" }))
                    .collect();
                serde_json::json!({ "entities": entities }).to_string()
            }
        }
    }
}

impl LlmProvider for StubProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = (bundle.task, sha256_hex(&bundle.user_text));
        Ok(match self.scripted.get(&key) {
            Some(r) => r.clone(),
            None => self.heuristic(bundle.task, &bundle.user_text),
        })
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

/// Wraps a provider and fails the calls whose 0-based ordinals are listed.
pub struct FlakyProvider {
    inner: Arc<dyn LlmProvider>,
    fail_at: BTreeSet<u64>,
    error: ProviderError,
    calls: AtomicU64,
}

impl FlakyProvider {
    pub fn new(inner: Arc<dyn LlmProvider>, fail_at: impl IntoIterator<Item = u64>) -> Self {
        Self {
            inner,
            fail_at: fail_at.into_iter().collect(),
            error: ProviderError::Transient("injected failure".into()),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_error(mut self, error: ProviderError) -> Self {
        self.error = error;
        self
    }
}

impl LlmProvider for FlakyProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if self.fail_at.contains(&n) {
            return Err(self.error.clone());
        }
        self.inner.complete(bundle)
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}
