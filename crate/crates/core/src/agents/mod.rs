//! Uniform agent abstraction over scripted mocks and remote chat endpoints.
//!
//! Local agents speak a continuation convention: the first message is the
//! system prompt (which embeds the question), and an optional trailing
//! assistant message carries the trajectory emitted so far; `generate`
//! returns the next chunk of trajectory text. Cloud agents receive the
//! request/reply exchange history and answer the last user message.

pub mod mock;
pub mod prompts;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{FactTable, MockCloudAgent, ScriptedLocalAgent};
pub use prompts::{render_cloud_prompt, render_local_prompt, PromptTemplates, TemplateError};
pub use remote::RemoteChatAgent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

/// Sampling controls passed to every `generate` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: usize,
    #[serde(default)]
    pub stop: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams { temperature: 1.0, max_tokens: 512, stop: Vec::new(), seed: None }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transport error{}: {message}", status.map(|s| format!(" (status {s})")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },
    #[error("generation hit the token budget")]
    BudgetExceeded { partial: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A chat-completion-shaped model endpoint (mock, policy-backed, or remote).
pub trait Agent: Send + Sync {
    fn generate(&self, messages: &[ChatMessage], params: &GenerationParams) -> Result<String, AgentError>;

    /// Stable identifier used in caches and logs.
    fn tag(&self) -> String;
}

/// Validate the shared `generate` preconditions.
pub fn check_messages(messages: &[ChatMessage]) -> Result<(), AgentError> {
    if messages.is_empty() {
        return Err(AgentError::InvalidRequest("messages must be non-empty".into()));
    }
    if messages[0].role != Role::System {
        return Err(AgentError::InvalidRequest("first message must have the system role".into()));
    }
    Ok(())
}

/// The cloud model's two actions, as classified from its raw reply text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentReplyClass {
    /// The request was underspecified; payload asks for more context.
    NeedContext(String),
    /// Useful information answering the request.
    Information(String),
}

impl AgentReplyClass {
    pub fn payload(&self) -> &str {
        match self {
            AgentReplyClass::NeedContext(s) | AgentReplyClass::Information(s) => s,
        }
    }

    pub fn is_need(&self) -> bool {
        matches!(self, AgentReplyClass::NeedContext(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cloud reply contains neither a <need> nor an <information> block")]
pub struct ClassifyError;

fn extract_block<'a>(raw: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = raw.find(open)? + open.len();
    let end = raw[start..].find(close)? + start;
    Some(&raw[start..end])
}

/// Classify a cloud reply. Reasoning text outside the tags is discarded; if
/// both tags are present, the need block wins.
pub fn classify_reply(raw: &str) -> Result<AgentReplyClass, ClassifyError> {
    if let Some(need) = extract_block(raw, "<need>", "</need>") {
        return Ok(AgentReplyClass::NeedContext(need.trim().to_string()));
    }
    if let Some(info) = extract_block(raw, "<information>", "</information>") {
        return Ok(AgentReplyClass::Information(info.trim().to_string()));
    }
    Err(ClassifyError)
}
