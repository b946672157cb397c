//! Chat-completion HTTP backend. One user message per request carrying the
//! rendered prompt, temperature 0.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, BackendError, Completion, CompletionCall};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostedConfig {
    pub endpoint_url: String,
    pub model: String,
    pub api_key: String,
}

pub struct HostedBackend {
    config: HostedConfig,
    client: reqwest::Client,
}

impl HostedBackend {
    pub fn new(config: HostedConfig) -> Self {
        Self { config, client: reqwest::Client::new() }
    }

    pub fn request_body(&self, prompt: &str) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
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
    content: Option<String>,
}

/// Pulls the first choice's text out of a chat-completion response body.
pub(crate) fn extract_content(body: &str) -> Result<String, BackendError> {
    let parsed: ChatResponse =
        serde_json::from_str(body).map_err(|e| BackendError::Transport(format!("malformed response: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content.unwrap_or_default())
        .ok_or_else(|| BackendError::Transport("response has no choices".into()))
}

#[async_trait]
impl Backend for HostedBackend {
    fn name(&self) -> &str {
        "hosted"
    }

    async fn complete(&self, call: CompletionCall<'_>) -> Result<Completion, BackendError> {
        let response = self
            .client
            .post(&self.config.endpoint_url)
            .bearer_auth(&self.config.api_key)
            .json(&self.request_body(call.request.prompt.as_str()))
            .send()
            .await
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(BackendError::Auth(format!("endpoint answered {status}")));
        }
        let body = response.text().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!("endpoint answered {status}: {body}")));
        }
        Ok(Completion { text: extract_content(&body)?, simulated_latency_ms: None })
    }
}
