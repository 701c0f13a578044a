//! Per-task prompt construction, model providers, reply parsing and the
//! annotation job runner.

mod job;
mod openai;
mod parse;
mod stub;
mod templates;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use job::{run_annotation_job, AnnotationJob, FailureRecord, JobOutcome, JobPolicy, PromptRecord};
pub use openai::{OpenAiConfig, OpenAiProvider};
pub use parse::{parse_response, ResponseError};
pub use stub::{FlakyProvider, ScriptedReply, StubProvider};
pub use templates::{
    build_prompt, response_schema, Definitions, GenerationParams, IdentityDisclosure, PromptConfig,
    PromptError,
};

use crate::provider::ProviderError;

/// The six per-paragraph annotation tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationTask {
    Stance,
    Topic,
    Sentiment,
    Polarization,
    Populism,
    Ner,
}

impl AnnotationTask {
    pub const ALL: [AnnotationTask; 6] =
        [Self::Stance, Self::Topic, Self::Sentiment, Self::Polarization, Self::Populism, Self::Ner];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stance => "stance",
            Self::Topic => "topic",
            Self::Sentiment => "sentiment",
            Self::Polarization => "polarization",
            Self::Populism => "populism",
            Self::Ner => "ner",
        }
    }

    /// Tasks whose prompts must never reveal who is speaking.
    pub fn is_identity_free(self) -> bool {
        matches!(self, Self::Polarization | Self::Populism)
    }

    /// Tasks whose prompts always name the speaker and their role.
    pub fn requires_identity(self) -> bool {
        matches!(self, Self::Stance | Self::Topic)
    }

    pub fn is_intensity(self) -> bool {
        matches!(self, Self::Polarization | Self::Populism)
    }

    /// Parses a comma-separated task list; `all` expands to every task.
    pub fn parse_list(s: &str) -> Result<Vec<AnnotationTask>, String> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        let mut out: Vec<AnnotationTask> = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()?;
        out.sort();
        out.dedup();
        if out.is_empty() {
            return Err("empty task list".into());
        }
        Ok(out)
    }
}

impl fmt::Display for AnnotationTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnnotationTask {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task '{s}'"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stance {
    Criticism,
    PoliticalAgenda,
}

impl Stance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Criticism => "criticism",
            Self::PoliticalAgenda => "political_agenda",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityType {
    Individual,
    Group,
    Organization,
    PoliticalParty,
    Location,
    Country,
    Date,
}

impl EntityType {
    pub const ALL: [EntityType; 7] = [
        Self::Individual,
        Self::Group,
        Self::Organization,
        Self::PoliticalParty,
        Self::Location,
        Self::Country,
        Self::Date,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Individual => "individual",
            Self::Group => "group",
            Self::Organization => "organization",
            Self::PoliticalParty => "political_party",
            Self::Location => "location",
            Self::Country => "country",
            Self::Date => "date",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub topic_id: String,
    pub label: String,
}

/// The closed list of themes a paragraph can be assigned to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicTaxonomy {
    pub topics: Vec<Topic>,
}

impl TopicTaxonomy {
    pub fn new(topics: Vec<Topic>) -> Result<Self, PromptError> {
        let t = Self { topics };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.topics.is_empty() {
            return Err(PromptError::Taxonomy("taxonomy is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.topics {
            if t.topic_id.trim().is_empty() {
                return Err(PromptError::Taxonomy("empty topic id".into()));
            }
            if !seen.insert(t.topic_id.as_str()) {
                return Err(PromptError::Taxonomy(format!("duplicate topic id '{}'", t.topic_id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.topics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.topics.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.topics.iter().any(|t| t.topic_id == id)
    }

    pub fn label(&self, id: &str) -> Option<&str> {
        self.topics.iter().find(|t| t.topic_id == id).map(|t| t.label.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.topics.iter().map(|t| t.topic_id.as_str())
    }
}

/// A task-typed annotation payload. Serializes as `{"task": .., "value": ..}`
/// so the value type always matches its task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", content = "value", rename_all = "snake_case")]
pub enum AnnotationValue {
    Stance(Stance),
    Topic(String),
    Sentiment(f64),
    Polarization(f64),
    Populism(f64),
    Ner(Vec<Entity>),
}

impl AnnotationValue {
    pub fn task(&self) -> AnnotationTask {
        match self {
            Self::Stance(_) => AnnotationTask::Stance,
            Self::Topic(_) => AnnotationTask::Topic,
            Self::Sentiment(_) => AnnotationTask::Sentiment,
            Self::Polarization(_) => AnnotationTask::Polarization,
            Self::Populism(_) => AnnotationTask::Populism,
            Self::Ner(_) => AnnotationTask::Ner,
        }
    }

    pub fn score(&self) -> Option<f64> {
        match self {
            Self::Sentiment(v) | Self::Polarization(v) | Self::Populism(v) => Some(*v),
            _ => None,
        }
    }

    /// The bare value, without the task tag.
    pub fn to_json(&self) -> Value {
        match self {
            Self::Stance(s) => Value::String(s.as_str().to_string()),
            Self::Topic(t) => Value::String(t.clone()),
            Self::Sentiment(v) | Self::Polarization(v) | Self::Populism(v) => serde_json::json!(v),
            Self::Ner(e) => serde_json::to_value(e).expect("entities serialize"),
        }
    }

    /// Inverse of [`AnnotationValue::to_json`].
    pub fn from_json(task: AnnotationTask, value: &Value) -> Result<Self, String> {
        let bad = || format!("value {value} does not fit task {task}");
        Ok(match task {
            AnnotationTask::Stance => Self::Stance(serde_json::from_value(value.clone()).map_err(|_| bad())?),
            AnnotationTask::Topic => Self::Topic(value.as_str().ok_or_else(bad)?.to_string()),
            AnnotationTask::Sentiment => Self::Sentiment(value.as_f64().ok_or_else(bad)?),
            AnnotationTask::Polarization => Self::Polarization(value.as_f64().ok_or_else(bad)?),
            AnnotationTask::Populism => Self::Populism(value.as_f64().ok_or_else(bad)?),
            AnnotationTask::Ner => Self::Ner(serde_json::from_value(value.clone()).map_err(|_| bad())?),
        })
    }
}

/// One model output for one (speech, paragraph, task), before review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub speech_id: String,
    pub paragraph_index: usize,
    #[serde(flatten)]
    pub value: AnnotationValue,
    pub provider_name: String,
    pub raw_response: String,
    pub created_at: DateTime<Utc>,
}

impl RawAnnotation {
    pub fn task(&self) -> AnnotationTask {
        self.value.task()
    }
}

/// Everything needed for one provider call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub task: AnnotationTask,
    pub system_context: String,
    pub user_text: String,
    pub response_schema: String,
    pub generation_params: GenerationParams,
}

/// A chat-completion style model.
pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError>;
    /// Calls issued so far, including failed ones.
    fn calls(&self) -> u64;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_annotation_wire_shape() {
        let a = RawAnnotation {
            speech_id: "s1".into(),
            paragraph_index: 3,
            value: AnnotationValue::Sentiment(-0.62),
            provider_name: "stub".into(),
            raw_response: "{\"score\": -0.62}".into(),
            created_at: DateTime::parse_from_rfc3339("2023-05-01T10:00:00Z").unwrap().into(),
        };
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["task"], "sentiment");
        assert_eq!(v["value"], -0.62);
        let back: RawAnnotation = serde_json::from_value(v).unwrap();
        assert_eq!(back, a);
    }

    #[test]
    fn task_list_parsing() {
        assert_eq!(AnnotationTask::parse_list("all").unwrap().len(), 6);
        assert_eq!(
            AnnotationTask::parse_list("topic, stance,topic").unwrap(),
            vec![AnnotationTask::Stance, AnnotationTask::Topic]
        );
        assert!(AnnotationTask::parse_list("stance,mood").is_err());
    }

    #[test]
    fn value_json_roundtrip_per_task() {
        let values = [
            AnnotationValue::Stance(Stance::PoliticalAgenda),
            AnnotationValue::Topic("economy".into()),
            AnnotationValue::Sentiment(0.5),
            AnnotationValue::Polarization(0.0),
            AnnotationValue::Populism(0.9),
            AnnotationValue::Ner(vec![Entity { surface: "SYRIZA".into(), entity_type: EntityType::PoliticalParty }]),
        ];
        for v in values {
            assert_eq!(AnnotationValue::from_json(v.task(), &v.to_json()).unwrap(), v);
        }
        assert!(AnnotationValue::from_json(AnnotationTask::Sentiment, &serde_json::json!("high")).is_err());
    }

    #[test]
    fn taxonomy_rejects_duplicates() {
        let t = |id: &str| Topic { topic_id: id.into(), label: id.into() };
        assert!(TopicTaxonomy::new(vec![t("a"), t("a")]).is_err());
        assert!(TopicTaxonomy::new(vec![]).is_err());
        assert!(TopicTaxonomy::new(vec![t("a"), t("b")]).is_ok());
    }
}
