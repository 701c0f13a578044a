use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnnotationTask, EntityType, PromptBundle, TopicTaxonomy};
use crate::corpus::{Leader, Paragraph};

const DEFAULT_TEMPLATES: [(AnnotationTask, &str); 6] = [
    (AnnotationTask::Stance, include_str!("../../../../prompts/stance.txt")),
    (AnnotationTask::Topic, include_str!("../../../../prompts/topic.txt")),
    (AnnotationTask::Sentiment, include_str!("../../../../prompts/sentiment.txt")),
    (AnnotationTask::Polarization, include_str!("../../../../prompts/polarization.txt")),
    (AnnotationTask::Populism, include_str!("../../../../prompts/populism.txt")),
    (AnnotationTask::Ner, include_str!("../../../../prompts/ner.txt")),
];
const DEFAULT_PREAMBLE: &str = include_str!("../../../../prompts/identity_preamble.txt");
const DEFAULT_POLARIZATION: &str = include_str!("../../../../prompts/definitions/polarization.txt");
const DEFAULT_POPULISM: &str = include_str!("../../../../prompts/definitions/populism.txt");
const DEFAULT_TOPICS: &str = include_str!("../../../../prompts/topics.json");
const DEFAULT_SETTINGS: &str = include_str!("../../../../prompts/settings.toml");

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("paragraph {0} has no translation")]
    MissingTranslation(usize),
    #[error("no definition text configured for {0}")]
    MissingDefinition(AnnotationTask),
    #[error("{task} prompt would disclose speaker identity ('{term}')")]
    Leakage { task: AnnotationTask, term: String },
    #[error("{task} prompt must name the speaker and their role")]
    MissingIdentity { task: AnnotationTask },
    #[error("template for {task}: {message}")]
    Template { task: AnnotationTask, message: String },
    #[error("topic taxonomy: {0}")]
    Taxonomy(String),
    #[error("prompt configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub model_name: String,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 512, model_name: "gpt-3.5-turbo".into() }
    }
}

/// Whether the speaker is named for the tasks where that is a choice.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentityDisclosure {
    pub sentiment: bool,
    pub ner: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Definitions {
    pub polarization: Option<String>,
    pub populism: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
struct Settings {
    monolingual: bool,
    blocklist: Vec<String>,
    generation: GenerationParams,
    disclosure: IdentityDisclosure,
}

#[derive(Debug, Deserialize)]
struct TaxonomyFile {
    topics: Vec<super::Topic>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptConfig {
    pub templates: BTreeMap<AnnotationTask, String>,
    pub identity_preamble: String,
    pub definitions: Definitions,
    pub taxonomy: TopicTaxonomy,
    pub generation: GenerationParams,
    pub disclosure: IdentityDisclosure,
    /// Annotate the original text when no translation exists.
    pub monolingual: bool,
    /// Names that must never appear in identity-free prompts, on top of the
    /// speaker's own names and party.
    pub blocklist: Vec<String>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        let settings: Settings = toml::from_str(DEFAULT_SETTINGS).expect("bundled settings.toml parses");
        let taxonomy: TaxonomyFile = serde_json::from_str(DEFAULT_TOPICS).expect("bundled topics.json parses");
        Self {
            templates: DEFAULT_TEMPLATES.iter().map(|(t, s)| (*t, s.to_string())).collect(),
            identity_preamble: DEFAULT_PREAMBLE.to_string(),
            definitions: Definitions {
                polarization: Some(DEFAULT_POLARIZATION.trim().to_string()),
                populism: Some(DEFAULT_POPULISM.trim().to_string()),
            },
            taxonomy: TopicTaxonomy { topics: taxonomy.topics },
            generation: settings.generation,
            disclosure: settings.disclosure,
            monolingual: settings.monolingual,
            blocklist: settings.blocklist,
        }
    }
}

impl PromptConfig {
    /// Loads a `prompts/` directory. Task templates, the preamble, the topic
    /// list and settings fall back to the bundled defaults when absent.
    /// Definition texts do not: a missing file leaves that definition unset.
    pub fn load_dir(dir: &Path) -> crate::Result<Self> {
        let read = |rel: &str| -> crate::Result<Option<String>> {
            let path = dir.join(rel);
            match std::fs::read_to_string(&path) {
                Ok(s) => Ok(Some(s)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(crate::Error::io(format!("reading {}", path.display()), e)),
            }
        };
        let mut cfg = Self::default();
        for task in AnnotationTask::ALL {
            if let Some(t) = read(&format!("{}.txt", task.as_str()))? {
                cfg.templates.insert(task, t);
            }
        }
        if let Some(p) = read("identity_preamble.txt")? {
            cfg.identity_preamble = p;
        }
        cfg.definitions = Definitions {
            polarization: read("definitions/polarization.txt")?.map(|s| s.trim().to_string()),
            populism: read("definitions/populism.txt")?.map(|s| s.trim().to_string()),
        };
        if let Some(t) = read("topics.json")? {
            let file: TaxonomyFile = serde_json::from_str(&t).map_err(|e| crate::Error::json("parsing topics.json", e))?;
            cfg.taxonomy = TopicTaxonomy::new(file.topics)?;
        }
        if let Some(s) = read("settings.toml")? {
            let settings: Settings =
                toml::from_str(&s).map_err(|e| PromptError::Config(format!("settings.toml: {e}")))?;
            cfg.generation = settings.generation;
            cfg.disclosure = settings.disclosure;
            cfg.monolingual = settings.monolingual;
            cfg.blocklist = settings.blocklist;
        }
        Ok(cfg)
    }

    fn discloses_identity(&self, task: AnnotationTask) -> bool {
        match task {
            AnnotationTask::Stance | AnnotationTask::Topic => true,
            AnnotationTask::Polarization | AnnotationTask::Populism => false,
            AnnotationTask::Sentiment => self.disclosure.sentiment,
            AnnotationTask::Ner => self.disclosure.ner,
        }
    }

    fn definition(&self, task: AnnotationTask) -> Option<&str> {
        match task {
            AnnotationTask::Polarization => self.definitions.polarization.as_deref(),
            AnnotationTask::Populism => self.definitions.populism.as_deref(),
            _ => None,
        }
        .filter(|d| !d.trim().is_empty())
    }
}

/// Substitutes `{name}` placeholders. `{{` and `}}` are literal braces.
fn render(task: AnnotationTask, template: &str, vars: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if tail.starts_with("{{") || tail.starts_with("}}") {
            out.push_str(&tail[..1]);
            rest = &tail[2..];
            continue;
        }
        if tail.starts_with('}') {
            return Err(PromptError::Template { task, message: "unmatched '}'".into() });
        }
        let end = tail
            .find('}')
            .ok_or_else(|| PromptError::Template { task, message: "unterminated placeholder".into() })?;
        let name = &tail[1..end];
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| PromptError::Template { task, message: format!("placeholder {{{name}}} is not available") })?;
        out.push_str(value);
        rest = &tail[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// The structured-reply instructions for a task.
pub fn response_schema(task: AnnotationTask, taxonomy: &TopicTaxonomy) -> String {
    let lead = "Reply with a single JSON object and nothing else, of the form";
    match task {
        AnnotationTask::Stance => format!(
            "{lead} {{\"stance\": \"<label>\"}} where <label> is \"criticism\" or \"political_agenda\"."
        ),
        AnnotationTask::Topic => {
            let ids: Vec<&str> = taxonomy.ids().collect();
            format!("{lead} {{\"topic\": \"<topic_id>\"}} where <topic_id> is one of: {}.", ids.join(", "))
        }
        AnnotationTask::Sentiment => format!("{lead} {{\"score\": <number between -1 and 1>}}."),
        AnnotationTask::Polarization | AnnotationTask::Populism => {
            format!("{lead} {{\"score\": <number between 0 and 1>}}.")
        }
        AnnotationTask::Ner => {
            let types: Vec<&str> = EntityType::ALL.iter().map(|t| t.as_str()).collect();
            format!(
                "{lead} {{\"entities\": [{{\"surface\": \"<text as written>\", \"type\": \"<type>\"}}]}} where <type> is one of: {}. Use an empty list when there are none.",
                types.join(", ")
            )
        }
    }
}

fn find_leak<'a>(context: &str, terms: impl IntoIterator<Item = &'a String>) -> Option<String> {
    let haystack = context.to_lowercase();
    terms
        .into_iter()
        .filter(|t| !t.trim().is_empty())
        .find(|t| haystack.contains(&t.to_lowercase()))
        .cloned()
}

/// Builds the prompt for one (task, paragraph). Stance and topic prompts name
/// the speaker; polarization and populism prompts carry the configured
/// definition and must not contain any blocklisted name.
pub fn build_prompt(
    task: AnnotationTask,
    paragraph: &Paragraph,
    leader: &Leader,
    config: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    let user_text = match (&paragraph.translated_text, config.monolingual) {
        (Some(t), _) => t.clone(),
        (None, true) => paragraph.original_text.clone(),
        (None, false) => return Err(PromptError::MissingTranslation(paragraph.index)),
    };
    let template = config
        .templates
        .get(&task)
        .ok_or_else(|| PromptError::Template { task, message: "no template configured".into() })?;

    let topics = config
        .taxonomy
        .topics
        .iter()
        .map(|t| format!("- {}: {}", t.topic_id, t.label))
        .collect::<Vec<_>>()
        .join("\n");
    let disclose = config.discloses_identity(task);
    let mut vars: Vec<(&str, &str)> = Vec::new();
    if disclose {
        vars.extend([
            ("leader_name", leader.full_name.as_str()),
            ("leader_role", leader.role_description.as_str()),
            ("party", leader.party.as_str()),
        ]);
    }
    if task == AnnotationTask::Topic {
        vars.push(("topics", topics.as_str()));
    }
    let definition;
    if task.is_intensity() {
        definition = config.definition(task).ok_or(PromptError::MissingDefinition(task))?.to_string();
        vars.push(("definition", definition.as_str()));
    }

    let mut system_context = render(task, template, &vars)?;
    if disclose && !task.requires_identity() {
        let preamble = render(task, &config.identity_preamble, &vars)?;
        system_context = format!("{}\n{}", preamble.trim_end(), system_context);
    }
    let system_context = system_context.trim_end().to_string();

    if disclose {
        if !system_context.contains(&leader.full_name) || !system_context.contains(&leader.role_description) {
            return Err(PromptError::MissingIdentity { task });
        }
    } else {
        let terms: Vec<String> = leader.identity_terms().into_iter().chain(config.blocklist.iter().cloned()).collect();
        if let Some(term) = find_leak(&system_context, &terms) {
            return Err(PromptError::Leakage { task, term });
        }
    }
    if task.is_intensity() && config.definition(task).is_some_and(|d| !system_context.contains(d)) {
        return Err(PromptError::Template { task, message: "template must include {definition}".into() });
    }

    Ok(PromptBundle {
        task,
        system_context,
        user_text,
        response_schema: response_schema(task, &config.taxonomy),
        generation_params: config.generation.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mitsotakis() -> Leader {
        Leader {
            id: "mitsotakis".into(),
            full_name: "Kyriakos Mitsotakis".into(),
            role_description: "the Greek Prime Minister and President of New Democracy".into(),
            party: "New Democracy".into(),
            aliases: vec!["K. Mitsotakis".into()],
        }
    }

    fn paragraph() -> Paragraph {
        Paragraph {
            index: 0,
            original_text: "Θα χτίσουμε.".into(),
            translated_text: Some("We will build.".into()),
            word_count: 2,
        }
    }

    #[test]
    fn stance_prompt_names_the_prime_minister() {
        let b = build_prompt(AnnotationTask::Stance, &paragraph(), &mitsotakis(), &PromptConfig::default()).unwrap();
        assert!(b.system_context.contains("Greek Prime Minister"));
        assert!(b.system_context.contains("New Democracy"));
        assert!(b.system_context.contains("Kyriakos Mitsotakis"));
        assert_eq!(b.user_text, "We will build.");
        assert_eq!(b.generation_params.temperature, 0.0);
    }

    #[test]
    fn polarization_prompt_is_identity_free_and_has_definition() {
        let cfg = PromptConfig::default();
        for task in [AnnotationTask::Polarization, AnnotationTask::Populism] {
            let b = build_prompt(task, &paragraph(), &mitsotakis(), &cfg).unwrap();
            assert!(!b.system_context.contains("Mitsotakis"));
            assert!(!b.system_context.contains("New Democracy"));
            let def = cfg.definition(task).unwrap();
            assert!(b.system_context.contains(def));
        }
    }

    #[test]
    fn topic_schema_enumerates_every_topic() {
        let cfg = PromptConfig::default();
        assert_eq!(cfg.taxonomy.len(), 33);
        let b = build_prompt(AnnotationTask::Topic, &paragraph(), &mitsotakis(), &cfg).unwrap();
        for id in cfg.taxonomy.ids() {
            assert!(b.response_schema.contains(id), "{id}");
            assert!(b.system_context.contains(id), "{id}");
        }
    }

    #[test]
    fn missing_translation_is_an_error_unless_monolingual() {
        let mut p = paragraph();
        p.translated_text = None;
        let mut cfg = PromptConfig::default();
        assert_eq!(
            build_prompt(AnnotationTask::Stance, &p, &mitsotakis(), &cfg),
            Err(PromptError::MissingTranslation(0))
        );
        cfg.monolingual = true;
        let b = build_prompt(AnnotationTask::Stance, &p, &mitsotakis(), &cfg).unwrap();
        assert_eq!(b.user_text, "Θα χτίσουμε.");
    }

    #[test]
    fn missing_definition_is_an_error() {
        let mut cfg = PromptConfig::default();
        cfg.definitions.populism = None;
        assert_eq!(
            build_prompt(AnnotationTask::Populism, &paragraph(), &mitsotakis(), &cfg),
            Err(PromptError::MissingDefinition(AnnotationTask::Populism))
        );
    }

    #[test]
    fn definition_mentioning_a_party_is_rejected() {
        let mut cfg = PromptConfig::default();
        cfg.definitions.polarization = Some("As practised by New Democracy.".into());
        assert!(matches!(
            build_prompt(AnnotationTask::Polarization, &paragraph(), &mitsotakis(), &cfg),
            Err(PromptError::Leakage { .. })
        ));
        cfg.definitions.polarization = Some("A definition.".into());
        cfg.blocklist = vec!["definition".into()];
        assert!(matches!(
            build_prompt(AnnotationTask::Polarization, &paragraph(), &mitsotakis(), &cfg),
            Err(PromptError::Leakage { .. })
        ));
    }

    #[test]
    fn identity_placeholder_in_identity_free_template_fails() {
        let mut cfg = PromptConfig::default();
        cfg.templates.insert(AnnotationTask::Populism, "Speaker {leader_name}. {definition}".into());
        assert!(matches!(
            build_prompt(AnnotationTask::Populism, &paragraph(), &mitsotakis(), &cfg),
            Err(PromptError::Template { .. })
        ));
    }

    #[test]
    fn sentiment_disclosure_is_configurable() {
        let mut cfg = PromptConfig::default();
        let b = build_prompt(AnnotationTask::Sentiment, &paragraph(), &mitsotakis(), &cfg).unwrap();
        assert!(!b.system_context.contains("Mitsotakis"));
        cfg.disclosure.sentiment = true;
        let b = build_prompt(AnnotationTask::Sentiment, &paragraph(), &mitsotakis(), &cfg).unwrap();
        assert!(b.system_context.starts_with("The speaker is Kyriakos Mitsotakis"));
    }

    #[test]
    fn render_handles_escapes_and_unknowns() {
        let t = AnnotationTask::Stance;
        assert_eq!(render(t, "a {x} {{b}}", &[("x", "1")]).unwrap(), "a 1 {b}");
        assert!(render(t, "a {y}", &[("x", "1")]).is_err());
        assert!(render(t, "a {x", &[("x", "1")]).is_err());
    }

    #[test]
    fn load_dir_overrides_and_drops_definitions() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("stance.txt"), "Speech of {leader_name}, {leader_role}. Custom.").unwrap();
        std::fs::write(dir.path().join("settings.toml"), "[generation]\nmodel_name = \"local-model\"\n").unwrap();
        let cfg = PromptConfig::load_dir(dir.path()).unwrap();
        assert!(cfg.templates[&AnnotationTask::Stance].contains("Custom"));
        assert_eq!(cfg.generation.model_name, "local-model");
        assert!(cfg.definitions.polarization.is_none());
    }
}
