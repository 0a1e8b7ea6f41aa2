use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::promptkit::{Conversation, Role, Stage};
use crate::taxonomy::RootCauseClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    /// `/chat/completions`-style endpoint (OpenAI and compatible gateways).
    Openai,
    /// Anthropic messages API.
    Anthropic,
    /// Offline marker-driven mock, see [`MarkerMockProvider`].
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_id: String,
    pub decoding: Decoding,
    /// Environment variable holding the API key.
    pub auth_env: Option<String>,
    pub rate_limit_per_minute: u32,
    pub max_concurrent: usize,
    pub timeout_secs: u64,
    /// Retries of transport-level failures only.
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            name: "mock".into(),
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model_id: "mock-marker-v1".into(),
            decoding: Decoding::default(),
            auth_env: None,
            rate_limit_per_minute: 60,
            max_concurrent: 2,
            timeout_secs: 60,
            max_retries: 3,
            backoff_base_ms: 500,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.model_id.trim().is_empty() {
            return Err(format!("provider `{}` has an empty model_id", self.name));
        }
        if self.decoding.temperature < 0.0 {
            return Err(format!("provider `{}` has a negative temperature", self.name));
        }
        if self.kind != ProviderKind::Mock && self.endpoint.trim().is_empty() {
            return Err(format!("provider `{}` needs an endpoint", self.name));
        }
        if self.rate_limit_per_minute == 0 || self.max_concurrent == 0 {
            return Err(format!("provider `{}` has a zero rate limit or concurrency", self.name));
        }
        Ok(())
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ProviderError::Auth(format!("environment variable {var} is not set"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("authentication: {0}")]
    Auth(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider payload: {0}")]
    Decode(String),
}

impl ProviderError {
    /// Failures that say nothing about the model's answer and may be retried.
    pub fn is_transport(&self) -> bool {
        match self {
            ProviderError::Transport(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;
    fn model_id(&self) -> &str;
    /// One completion for the conversation's final user turn.
    async fn complete(&self, conversation: &Conversation) -> Result<String, ProviderError>;
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

fn http_client(timeout: Duration) -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(timeout)
        .build()
        .expect("reqwest client")
}

async fn post_json(req: reqwest::RequestBuilder) -> Result<serde_json::Value, ProviderError> {
    let resp = req.send().await.map_err(|e| {
        if e.is_timeout() {
            ProviderError::Timeout
        } else {
            ProviderError::Transport(e.to_string())
        }
    })?;
    let status = resp.status();
    if status.as_u16() == 401 || status.as_u16() == 403 {
        return Err(ProviderError::Auth(format!("HTTP {status}")));
    }
    if !status.is_success() {
        let body = resp.text().await.unwrap_or_default();
        return Err(ProviderError::Status {
            status: status.as_u16(),
            body: body.chars().take(500).collect(),
        });
    }
    resp.json().await.map_err(|e| ProviderError::Decode(e.to_string()))
}

/// OpenAI-compatible chat completions.
pub struct OpenAiProvider {
    config: ProviderConfig,
    http: reqwest::Client,
}

impl OpenAiProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let http = http_client(Duration::from_secs(config.timeout_secs));
        Self { config, http }
    }
}

#[async_trait]
impl ChatProvider for OpenAiProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    async fn complete(&self, conversation: &Conversation) -> Result<String, ProviderError> {
        let messages: Vec<_> = conversation
            .turns
            .iter()
            .map(|t| json!({ "role": role_str(t.role), "content": t.content }))
            .collect();
        let body = json!({
            "model": self.config.model_id,
            "messages": messages,
            "temperature": self.config.decoding.temperature,
            "max_tokens": self.config.decoding.max_output_tokens,
        });
        let mut req = self.http.post(&self.config.endpoint).json(&body);
        if let Some(key) = self.config.api_key()? {
            req = req.bearer_auth(key);
        }
        let value = post_json(req).await?;
        let choice = value
            .pointer("/choices/0/message")
            .ok_or_else(|| ProviderError::Decode("no choices[0].message".into()))?;
        // a null content is an empty answer, not a transport failure
        Ok(choice.get("content").and_then(|c| c.as_str()).unwrap_or("").to_string())
    }
}

pub const ANTHROPIC_VERSION: &str = "2023-06-01";

/// Anthropic messages API. System turns go to the top-level `system` field.
pub struct AnthropicProvider {
    config: ProviderConfig,
    http: reqwest::Client,
}

impl AnthropicProvider {
    pub fn new(config: ProviderConfig) -> Self {
        let http = http_client(Duration::from_secs(config.timeout_secs));
        Self { config, http }
    }
}

#[async_trait]
impl ChatProvider for AnthropicProvider {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn model_id(&self) -> &str {
        &self.config.model_id
    }

    async fn complete(&self, conversation: &Conversation) -> Result<String, ProviderError> {
        let system: Vec<&str> = conversation
            .turns
            .iter()
            .filter(|t| t.role == Role::System)
            .map(|t| t.content.as_str())
            .collect();
        let messages: Vec<_> = conversation
            .turns
            .iter()
            .filter(|t| t.role != Role::System)
            .map(|t| json!({ "role": role_str(t.role), "content": t.content }))
            .collect();
        let body = json!({
            "model": self.config.model_id,
            "system": system.join("\n\n"),
            "messages": messages,
            "temperature": self.config.decoding.temperature,
            "max_tokens": self.config.decoding.max_output_tokens,
        });
        let mut req = self
            .http
            .post(&self.config.endpoint)
            .header("anthropic-version", ANTHROPIC_VERSION)
            .json(&body);
        if let Some(key) = self.config.api_key()? {
            req = req.header("x-api-key", key);
        }
        let value = post_json(req).await?;
        let blocks = value
            .get("content")
            .and_then(|c| c.as_array())
            .ok_or_else(|| ProviderError::Decode("no content array".into()))?;
        Ok(blocks
            .iter()
            .filter_map(|b| b.get("text").and_then(|t| t.as_str()))
            .collect::<Vec<_>>()
            .join(""))
    }
}

pub const FLAKY_MARKER: &str = "FLAKY-MARKER";
pub const CORRUPT_MARKER: &str = "MOCK-CORRUPT:";
pub const ROOT_CAUSE_HINT: &str = "root-cause-hint:";

/// Deterministic offline provider. Looks only at the query turn:
///
/// * RQ3/RQ4 answer `FLAKY` iff the query contains [`FLAKY_MARKER`];
/// * RQ5 answers the class named after [`ROOT_CAUSE_HINT`], else `Others`;
/// * `MOCK-CORRUPT:<stage>` in the query yields an unparseable reply at
///   that stage.
pub struct MarkerMockProvider {
    name: String,
    model_id: String,
}

impl MarkerMockProvider {
    pub fn new(name: impl Into<String>, model_id: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            model_id: model_id.into(),
        }
    }

    pub fn reply(conversation: &Conversation) -> String {
        let query = conversation.query().map(|t| t.content.as_str()).unwrap_or("");
        let corrupt = format!("{CORRUPT_MARKER}{}", conversation.stage.as_str());
        if query.contains(&corrupt) {
            return String::new();
        }
        match conversation.stage {
            Stage::Rq3 | Stage::Rq4 => {
                if query.contains(FLAKY_MARKER) {
                    "FLAKY".into()
                } else {
                    "NON-FLAKY".into()
                }
            }
            Stage::Rq5 => hinted_class(query)
                .unwrap_or(RootCauseClass::Others)
                .canonical_name()
                .into(),
        }
    }
}

/// Class named by the first `root-cause-hint:` line.
pub fn hinted_class(text: &str) -> Option<RootCauseClass> {
    let start = text.find(ROOT_CAUSE_HINT)? + ROOT_CAUSE_HINT.len();
    let line = text[start..].lines().next().unwrap_or("");
    RootCauseClass::parse_canonical(line)
}

#[async_trait]
impl ChatProvider for MarkerMockProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, conversation: &Conversation) -> Result<String, ProviderError> {
        Ok(Self::reply(conversation))
    }
}

type Script = dyn Fn(&Conversation) -> Result<String, ProviderError> + Send + Sync;

/// Mock driven by a closure, for tests that need exact replies or failures.
pub struct ScriptedProvider {
    name: String,
    model_id: String,
    script: Arc<Script>,
}

impl ScriptedProvider {
    pub fn new(
        model_id: impl Into<String>,
        script: impl Fn(&Conversation) -> Result<String, ProviderError> + Send + Sync + 'static,
    ) -> Self {
        let model_id = model_id.into();
        Self {
            name: format!("scripted:{model_id}"),
            model_id,
            script: Arc::new(script),
        }
    }

    /// Always replies with `text`.
    pub fn constant(text: &str) -> Self {
        let text = text.to_string();
        Self::new("scripted", move |_| Ok(text.clone()))
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, conversation: &Conversation) -> Result<String, ProviderError> {
        (self.script)(conversation)
    }
}

pub fn build_provider(config: &ProviderConfig) -> Arc<dyn ChatProvider> {
    match config.kind {
        ProviderKind::Openai => Arc::new(OpenAiProvider::new(config.clone())),
        ProviderKind::Anthropic => Arc::new(AnthropicProvider::new(config.clone())),
        ProviderKind::Mock => Arc::new(MarkerMockProvider::new(&config.name, &config.model_id)),
    }
}
