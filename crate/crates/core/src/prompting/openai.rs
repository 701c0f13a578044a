use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{LlmProvider, PromptBundle};
use crate::provider::ProviderError;

/// Connection settings for an OpenAI-compatible chat-completion endpoint.
/// The token itself is read from the environment variable named by
/// `api_key_env`, never from a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// Overrides the bundle's model name when set.
    pub model: Option<String>,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            model: None,
        }
    }
}

pub struct OpenAiProvider {
    config: OpenAiConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    calls: AtomicU64,
}

impl OpenAiProvider {
    pub fn new(config: OpenAiConfig) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs.max(1)))
            .build()
            .map_err(|e| ProviderError::Fatal(format!("building HTTP client: {e}")))?;
        Ok(Self { config, api_key, client, calls: AtomicU64::new(0) })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        let model = self.config.model.as_deref().unwrap_or(&bundle.generation_params.model_name);
        json!({
            "model": model,
            "temperature": bundle.generation_params.temperature,
            "max_tokens": bundle.generation_params.max_tokens,
            "messages": [
                { "role": "system", "content": format!("{}\n\n{}", bundle.system_context, bundle.response_schema) },
                { "role": "user", "content": bundle.user_text },
            ],
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

fn retry_after(headers: &reqwest::header::HeaderMap) -> Option<Duration> {
    headers
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|s| s.is_finite() && *s >= 0.0)
        .map(Duration::from_secs_f64)
}

impl LlmProvider for OpenAiProvider {
    fn name(&self) -> &str {
        "openai"
    }

    fn complete(&self, bundle: &PromptBundle) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut req = self.client.post(self.endpoint()).json(&self.request_body(bundle));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = resp.status();
        if status == reqwest::StatusCode::TOO_MANY_REQUESTS {
            return Err(ProviderError::RateLimited { retry_after: retry_after(resp.headers()) });
        }
        if status.is_server_error() {
            return Err(ProviderError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(ProviderError::Fatal(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse =
            resp.json().map_err(|e| ProviderError::Transient(format!("malformed completion body: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Transient("completion has no content".into()))
    }

    fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::{AnnotationTask, GenerationParams};

    #[test]
    fn request_body_shape() {
        let p = OpenAiProvider::new(OpenAiConfig { base_url: "http://localhost:9/v1/".into(), ..Default::default() })
            .unwrap();
        assert_eq!(p.endpoint(), "http://localhost:9/v1/chat/completions");
        let b = PromptBundle {
            task: AnnotationTask::Sentiment,
            system_context: "ctx".into(),
            user_text: "text".into(),
            response_schema: "schema".into(),
            generation_params: GenerationParams::default(),
        };
        let body = p.request_body(&b);
        assert_eq!(body["model"], "gpt-3.5-turbo");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["messages"][0]["content"], "ctx\n\nschema");
        assert_eq!(body["messages"][1]["content"], "text");
    }

    #[test]
    fn unreachable_endpoint_is_transient() {
        let p = OpenAiProvider::new(OpenAiConfig {
            base_url: "http://127.0.0.1:9/v1".into(),
            timeout_secs: 2,
            ..Default::default()
        })
        .unwrap();
        let b = PromptBundle {
            task: AnnotationTask::Stance,
            system_context: String::new(),
            user_text: String::new(),
            response_schema: String::new(),
            generation_params: GenerationParams::default(),
        };
        assert!(matches!(p.complete(&b), Err(ProviderError::Transient(_))));
        assert_eq!(p.calls(), 1);
    }
}
