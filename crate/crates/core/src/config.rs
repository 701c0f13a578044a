//! The TOML configuration file. Secrets never live here: the file only
//! names the environment variables that hold them.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};

use crate::classify::BandConfig;
use crate::prompting::{JobPolicy, OpenAiConfig};
use crate::provider::RetryPolicy;
use crate::review::AssignmentPolicy;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub store: StoreConfig,
    pub prompts: PromptsConfig,
    pub bands: BandConfig,
    pub review: ReviewConfig,
    pub jobs: JobPolicy,
    pub translation: TranslationConfig,
    pub providers: ProvidersConfig,
    pub server: ServerConfig,
    pub clock: ClockConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StoreConfig {
    pub path: PathBuf,
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { path: PathBuf::from("data") }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    /// A `prompts/` directory; unset means the bundled templates.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReviewConfig {
    /// Tasks listed here replace the default quotas; others keep them.
    #[serde(deserialize_with = "merge_policy")]
    pub policy: AssignmentPolicy,
    /// Queue reviews as soon as an annotate job produces annotations.
    pub auto_enqueue: bool,
}

impl Default for ReviewConfig {
    fn default() -> Self {
        Self { policy: AssignmentPolicy::default(), auto_enqueue: true }
    }
}

fn merge_policy<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<AssignmentPolicy, D::Error> {
    let given = AssignmentPolicy::deserialize(d)?;
    let mut policy = AssignmentPolicy::default();
    policy.requirements.extend(given.requirements);
    Ok(policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslationConfig {
    pub target: String,
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for TranslationConfig {
    fn default() -> Self {
        Self { target: "en".into(), parallelism: 4, retry: RetryPolicy::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub stub: StubConfig,
    /// Enables the `openai` provider.
    pub openai: Option<OpenAiConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StubConfig {
    /// JSONL script of canned replies; without it the stub answers from its
    /// built-in heuristic.
    pub script: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Environment variable holding the bearer token.
    pub token_env: String,
    /// Directory served under `/` (the review dashboard build).
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1:8080".into(), token_env: "DISCOURSE_API_TOKEN".into(), static_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    /// Stamp every record with this instant instead of the wall clock.
    pub fixed: Option<DateTime<Utc>>,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))?;
        cfg.bands.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store.path);
        if let Some(d) = &mut self.prompts.dir {
            fix(d);
        }
        if let Some(s) = &mut self.providers.stub.script {
            fix(s);
        }
        if let Some(d) = &mut self.server.static_dir {
            fix(d);
        }
    }

    /// The bearer token, read from the configured environment variable.
    pub fn server_token(&self) -> Option<String> {
        std::env::var(&self.server.token_env).ok().filter(|t| !t.is_empty())
    }
}
