//! OpenAI-compatible chat-completions client.
//!
//! Speaks `POST {base_url}/chat/completions` with the standard JSON body and
//! reads `choices[0].message.content` back. Base URL and key come from the
//! constructor or the `COLABFORGE_API_BASE` / `COLABFORGE_API_KEY`
//! environment variables.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{check_messages, Agent, AgentError, ChatMessage, GenerationParams};

pub const API_BASE_ENV: &str = "COLABFORGE_API_BASE";
pub const API_KEY_ENV: &str = "COLABFORGE_API_KEY";

#[derive(Debug, Clone)]
pub struct RemoteChatAgent {
    base_url: String,
    model: String,
    api_key: Option<String>,
    max_retries: u32,
    timeout: Duration,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: String,
}

impl RemoteChatAgent {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteChatAgent {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            max_retries: 2,
            timeout: Duration::from_secs(120),
        }
    }

    /// Build from `COLABFORGE_API_BASE`.
    pub fn from_env(model: impl Into<String>) -> Result<Self, AgentError> {
        let base = std::env::var(API_BASE_ENV).map_err(|_| {
            AgentError::InvalidRequest(format!("{API_BASE_ENV} is not set"))
        })?;
        Ok(Self::new(base, model))
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_max_retries(mut self, retries: u32) -> Self {
        self.max_retries = retries;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn call_once(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| AgentError::Transport { status: None, message: e.to_string() })?;

        let mut body = json!({
            "model": self.model,
            "messages": messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if !params.stop.is_empty() {
            body["stop"] = json!(params.stop);
        }
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }

        let url = format!("{}/chat/completions", self.base_url);
        let mut req = client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| AgentError::Transport { status: None, message: e.to_string() })?;

        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AgentError::Transport {
                status: Some(status.as_u16()),
                message: text.chars().take(300).collect(),
            });
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| AgentError::MalformedResponse(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| AgentError::MalformedResponse("response has no choices".into()))?;
        Ok(choice.message.content)
    }

    fn retryable(err: &AgentError) -> bool {
        match err {
            AgentError::Transport { status, .. } => {
                status.is_none() || status.map(|s| s >= 500).unwrap_or(false)
            }
            _ => false,
        }
    }
}

impl Agent for RemoteChatAgent {
    fn generate(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, AgentError> {
        check_messages(messages)?;
        let mut last_err = None;
        for attempt in 0..=self.max_retries {
            match self.call_once(messages, params) {
                Ok(text) => return Ok(text),
                Err(err) if Self::retryable(&err) && attempt < self.max_retries => {
                    std::thread::sleep(Duration::from_millis(100 * (attempt as u64 + 1)));
                    last_err = Some(err);
                }
                Err(err) => return Err(err),
            }
        }
        Err(last_err.unwrap_or_else(|| AgentError::Transport {
            status: None,
            message: "exhausted retries".into(),
        }))
    }

    fn tag(&self) -> String {
        format!("http:{}#{}", self.base_url, self.model)
    }
}
