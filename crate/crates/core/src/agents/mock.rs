//! Deterministic mock agents: a fact-table cloud model and scripted local
//! policies. Both are pure functions of their inputs, so batches replay
//! identically at any concurrency level.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::prompts::{extract_question, partial_trajectory};
use super::{check_messages, Agent, AgentError, ChatMessage, GenerationParams, Role};
use crate::textnorm::normalized_tokens;

fn default_true() -> bool {
    true
}

/// One entry of the cloud mock's knowledge.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fact {
    pub subject: String,
    pub relation: String,
    pub object: String,
    /// Facts the cloud cannot resolve still exist in the table so that
    /// requests about them yield a context request instead of silence.
    #[serde(default = "default_true")]
    pub cloud_known: bool,
    /// Extra surface forms that count as mentioning the relation.
    #[serde(default)]
    pub keywords: Vec<String>,
}

/// Lookup table backing the mock cloud agent.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FactTable {
    pub facts: Vec<Fact>,
}

fn contains_contiguous(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

impl FactTable {
    pub fn from_path(path: &Path) -> Result<Self, crate::data::IoError> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::data::IoError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| crate::data::IoError::Json {
            path: path.display().to_string(),
            line: 0,
            source: e,
        })
    }

    /// Resolve a request: the fact whose subject appears contiguously in the
    /// request and whose relation (or a keyword) is mentioned. First match in
    /// table order wins.
    pub fn resolve(&self, request: &str) -> Option<&Fact> {
        let req = normalized_tokens(request);
        self.facts.iter().find(|fact| {
            let subject = normalized_tokens(&fact.subject);
            if !contains_contiguous(&req, &subject) {
                return false;
            }
            let relation = normalized_tokens(&fact.relation);
            contains_contiguous(&req, &relation)
                || fact.keywords.iter().any(|k| contains_contiguous(&req, &normalized_tokens(k)))
        })
    }
}

/// Cloud mock with the two paper actions: resolve a well-specified request
/// with an information block, otherwise ask for context.
#[derive(Debug, Clone)]
pub struct MockCloudAgent {
    pub table: FactTable,
    /// Payload of the `<need>` block; the toy world overrides this with a
    /// single in-vocabulary symbol.
    pub need_payload: String,
    name: String,
}

impl MockCloudAgent {
    pub fn new(table: FactTable) -> Self {
        MockCloudAgent {
            table,
            need_payload: "Please state the exact entity and the attribute you need.".to_string(),
            name: "mock-cloud".to_string(),
        }
    }

    pub fn with_need_payload(mut self, payload: impl Into<String>) -> Self {
        self.need_payload = payload.into();
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl Agent for MockCloudAgent {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        check_messages(messages)?;
        let request = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| AgentError::InvalidRequest("cloud prompt has no user request".into()))?;
        match self.table.resolve(request) {
            Some(fact) if fact.cloud_known => Ok(format!("<information>{}</information>", fact.object)),
            _ => Ok(format!("<need>{}</need>", self.need_payload)),
        }
    }

    fn tag(&self) -> String {
        self.name.clone()
    }
}

/// Behavior of a scripted local policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedMode {
    /// Answer immediately from the answer map, never requesting.
    Solo,
    /// Forward the raw question as the request, then answer with whatever the
    /// reply payload was.
    ForwardRaw,
}

/// Scripted local agent driven by the rendered prompt alone.
#[derive(Debug, Clone)]
pub struct ScriptedLocalAgent {
    pub mode: ScriptedMode,
    /// Normalized question text → answer, for the solo script.
    answers: HashMap<String, String>,
}

impl ScriptedLocalAgent {
    pub fn solo<I>(answers: I) -> Self
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let answers = answers
            .into_iter()
            .map(|(q, a)| (normalized_tokens(&q).join(" "), a))
            .collect();
        ScriptedLocalAgent { mode: ScriptedMode::Solo, answers }
    }

    pub fn forward_raw() -> Self {
        ScriptedLocalAgent { mode: ScriptedMode::ForwardRaw, answers: HashMap::new() }
    }

    fn lookup(&self, question: &str) -> String {
        self.answers
            .get(&normalized_tokens(question).join(" "))
            .cloned()
            .unwrap_or_else(|| "unknown".to_string())
    }
}

fn last_reply_payload(partial: &str) -> Option<&str> {
    let start = partial.rfind("<agent-reply>")? + "<agent-reply>".len();
    let end = partial[start..].find("</agent-reply>")? + start;
    Some(&partial[start..end])
}

impl Agent for ScriptedLocalAgent {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        check_messages(messages)?;
        let question = extract_question(messages)
            .ok_or_else(|| AgentError::InvalidRequest("local prompt has no question".into()))?;
        let partial = partial_trajectory(messages);
        match self.mode {
            ScriptedMode::Solo => Ok(format!(
                "<think>I can answer this on my own.</think><answer>{}</answer>",
                self.lookup(question)
            )),
            ScriptedMode::ForwardRaw => match last_reply_payload(partial) {
                None => Ok(format!(
                    "<think>I will consult the agent with the question.</think><message>{question}</message>"
                )),
                Some(reply) => Ok(format!(
                    "<think>I will use the agent's reply.</think><answer>{}</answer>",
                    reply.trim()
                )),
            },
        }
    }

    fn tag(&self) -> String {
        match self.mode {
            ScriptedMode::Solo => "mock-solo".to_string(),
            ScriptedMode::ForwardRaw => "mock-forward".to_string(),
        }
    }
}

/// Always fails with a transport error; for fault-injection tests.
#[derive(Debug, Clone)]
pub struct FailingAgent;

impl Agent for FailingAgent {
    fn generate(&self, _messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        Err(AgentError::Transport { status: Some(503), message: "injected failure".into() })
    }

    fn tag(&self) -> String {
        "mock-fail".to_string()
    }
}
