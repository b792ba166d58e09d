//! Prompt templates for both model roles and the data pipeline, plus the
//! renderers that enforce the information-asymmetry contract: the cloud
//! prompt is built only from requests and prior replies, never from the raw
//! question or privacy items.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{ChatMessage, Role};
use crate::data::Query;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template {name} is missing placeholder {placeholder}")]
    MissingPlaceholder { name: &'static str, placeholder: &'static str },
    #[error("failed to read template {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// UTF-8 prompt templates with `{…}` placeholders. Defaults are compiled in;
/// a directory of same-named `.txt` files overrides them.
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub local_system: String,
    pub cloud_system: String,
    pub synth_inject: String,
    pub synth_check: String,
    pub privacy_judge: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            local_system: include_str!("../../assets/prompts/local_system.txt").to_string(),
            cloud_system: include_str!("../../assets/prompts/cloud_system.txt").to_string(),
            synth_inject: include_str!("../../assets/prompts/synth_inject.txt").to_string(),
            synth_check: include_str!("../../assets/prompts/synth_check.txt").to_string(),
            privacy_judge: include_str!("../../assets/prompts/privacy_judge.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load overrides from a directory; files not present keep the defaults.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut t = PromptTemplates::default();
        for (name, slot) in [
            ("local_system.txt", &mut t.local_system),
            ("cloud_system.txt", &mut t.cloud_system),
            ("synth_inject.txt", &mut t.synth_inject),
            ("synth_check.txt", &mut t.synth_check),
            ("privacy_judge.txt", &mut t.privacy_judge),
        ] {
            let path = dir.join(name);
            if path.exists() {
                *slot = fs::read_to_string(&path).map_err(|e| TemplateError::Read {
                    path: path.display().to_string(),
                    source: e,
                })?;
            }
        }
        Ok(t)
    }
}

fn fill(
    template: &str,
    name: &'static str,
    pairs: &[(&'static str, &str)],
) -> Result<String, TemplateError> {
    let mut out = template.to_string();
    for (placeholder, value) in pairs {
        if !out.contains(placeholder) {
            return Err(TemplateError::MissingPlaceholder { name, placeholder });
        }
        out = out.replace(placeholder, value);
    }
    Ok(out)
}

/// Prompt for the local model: the system message embeds the question
/// verbatim.
pub fn render_local_prompt(q: &Query, templates: &PromptTemplates) -> Result<Vec<ChatMessage>, TemplateError> {
    let system = fill(&templates.local_system, "local_system", &[("{question}", &q.question)])?;
    Ok(vec![ChatMessage::system(system)])
}

/// Prompt for the cloud model: system template, the past request/reply
/// exchanges, and the current request if any. By construction it carries no
/// query text and no privacy items.
pub fn render_cloud_prompt(
    past: &[(String, String)],
    current_request: Option<&str>,
    templates: &PromptTemplates,
) -> Vec<ChatMessage> {
    let mut messages = vec![ChatMessage::system(templates.cloud_system.clone())];
    for (request, reply) in past {
        messages.push(ChatMessage::user(request.clone()));
        messages.push(ChatMessage::assistant(reply.clone()));
    }
    if let Some(req) = current_request {
        messages.push(ChatMessage::user(req));
    }
    messages
}

/// Extract the question the local prompt embeds (used by scripted and
/// policy-backed local agents, which see only the rendered prompt).
pub fn extract_question(messages: &[ChatMessage]) -> Option<&str> {
    let system = messages.iter().find(|m| m.role == Role::System)?;
    let idx = system.content.rfind("Question:")?;
    Some(system.content[idx + "Question:".len()..].trim())
}

/// The trajectory text generated so far, carried as a trailing assistant
/// message.
pub fn partial_trajectory(messages: &[ChatMessage]) -> &str {
    match messages.last() {
        Some(m) if m.role == Role::Assistant => &m.content,
        _ => "",
    }
}
