//! HTTP-backed provider speaking an OpenAI-compatible chat-completions wire
//! format. Transport failures and 5xx/429 responses retry with bounded
//! exponential backoff (at most three attempts); other 4xx responses are
//! surfaced as provider refusals.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{GatewayError, ModelRequest, ModelResponse, Provider, Usage};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Full chat-completions endpoint URL.
    pub endpoint: String,
    /// Model name sent in the request payload.
    pub model: String,
    /// Environment variable holding the API key. Defaults to
    /// `COPKIT_API_KEY_<PROVIDER>` (provider id uppercased, non-alphanumeric
    /// characters mapped to `_`).
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Set false for endpoints that need no credentials (local servers).
    #[serde(default = "default_true")]
    pub require_api_key: bool,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_true() -> bool {
    true
}

fn default_max_attempts() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_timeout_secs() -> u64 {
    60
}

impl HttpProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: None,
            require_api_key: true,
            max_attempts: default_max_attempts(),
            backoff_base_ms: default_backoff_ms(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn without_api_key(mut self) -> Self {
        self.require_api_key = false;
        self
    }

    pub fn with_backoff_base_ms(mut self, ms: u64) -> Self {
        self.backoff_base_ms = ms;
        self
    }
}

/// Canonical credential variable name for a provider id.
pub fn api_key_env_for(provider_id: &str) -> String {
    let suffix: String = provider_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    format!("COPKIT_API_KEY_{suffix}")
}

pub struct HttpProvider {
    id: String,
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpProvider {
    pub fn new(id: impl Into<String>, config: HttpProviderConfig) -> Result<Self, GatewayError> {
        let id = id.into();
        let env_name = config
            .api_key_env
            .clone()
            .unwrap_or_else(|| api_key_env_for(&id));
        let api_key = std::env::var(&env_name).ok();
        if config.require_api_key && api_key.is_none() {
            return Err(GatewayError::MissingCredentials(env_name));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|err| GatewayError::Transport {
                attempts: 0,
                message: err.to_string(),
            })?;
        Ok(Self {
            id,
            config,
            api_key,
            client,
        })
    }

    fn payload(&self, request: &ModelRequest) -> serde_json::Value {
        let mut content = vec![json!({"type": "text", "text": request.instruction})];
        for image in &request.image_ids {
            content.push(json!({"type": "image_url", "image_url": {"url": image}}));
        }
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_output_tokens,
        })
    }

    fn attempt(&self, request: &ModelRequest) -> Result<ModelResponse, AttemptError> {
        let mut builder = self
            .client
            .post(&self.config.endpoint)
            .json(&self.payload(request));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder
            .send()
            .map_err(|err| AttemptError::Retryable(err.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|err| AttemptError::Retryable(err.to_string()))?;
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(AttemptError::Retryable(format!("HTTP {status}: {body}")));
        }
        if !status.is_success() {
            return Err(AttemptError::Refusal(format!("HTTP {status}: {body}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&body)
            .map_err(|err| AttemptError::Refusal(format!("unparseable response body: {err}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AttemptError::Refusal("response contained no choices".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(ModelResponse {
            text,
            usage: Usage::new(usage.prompt_tokens, usage.completion_tokens),
            provider_id: self.id.clone(),
            cached: false,
        })
    }
}

enum AttemptError {
    Retryable(String),
    Refusal(String),
}

impl Provider for HttpProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let max_attempts = self.config.max_attempts.max(1);
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(request) {
                Ok(response) => return Ok(response),
                Err(AttemptError::Refusal(message)) => {
                    return Err(GatewayError::ProviderRefusal(message));
                }
                Err(AttemptError::Retryable(message)) => {
                    last_message = message;
                    if attempt < max_attempts {
                        let delay = self
                            .config
                            .backoff_base_ms
                            .saturating_mul(1 << (attempt - 1));
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: max_attempts,
            message: last_message,
        })
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

#[derive(Deserialize, Default)]
struct ChatUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}
