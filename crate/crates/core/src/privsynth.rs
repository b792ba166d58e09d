//! Privacy-injection pipeline: turn plain QA pairs into privacy-infused QA
//! items with labeled privacy sets, filter out broken reformulations, and
//! report corpus statistics.
//!
//! The pipeline has three generation steps (personal information, fact
//! reformulation, question synthesis) performed by a generator agent, and a
//! two-condition filter: a checker agent confirms the answer is unchanged,
//! and a verbatim scan rejects questions that reveal the answer. A
//! deterministic rule-mock generator/checker pair over a synthetic QA corpus
//! drives the tests and the offline CLI path.

pub mod mock;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, AgentError, ChatMessage, GenerationParams, PromptTemplates, TemplateError};
use crate::data::Query;
use crate::jsonx::last_fenced_json;
use crate::textnorm::normalized_tokens;

/// A plain source QA pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LlmGenerated,
    RuleMock,
}

/// A privacy-infused QA item: the reformulated question, the unchanged
/// answers, and the labeled privacy set `P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivQaItem {
    pub question: String,
    pub answers: Vec<String>,
    pub privacy_items: Vec<String>,
    #[serde(default)]
    pub source: String,
    pub provenance: Provenance,
    /// Raw generator output kept for audit when LLM-backed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_gen: Option<String>,
}

impl PrivQaItem {
    pub fn to_query(&self, id: impl Into<String>) -> Query {
        Query {
            id: id.into(),
            question: self.question.clone(),
            answers: self.answers.clone(),
            privacy_items: self.privacy_items.clone(),
            source: self.source.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("generator output has no parseable fenced JSON")]
    ParseFailure,
    #[error("generator JSON missing or mistyped field {0:?}")]
    MissingField(&'static str),
    #[error("generator JSON has unexpected extra keys")]
    ExtraKeys,
    #[error("generated privacy set is empty")]
    EmptyPrivacy,
    #[error("generator agent failed: {0}")]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("checker reply unparseable")]
    CheckerUnparseable,
}

/// Does any gold answer appear verbatim (as a normalized token subsequence)
/// in the question? Shares the exact-match normalization.
pub fn answer_revealed(question: &str, answers: &[String]) -> bool {
    let q = normalized_tokens(question);
    answers.iter().any(|a| {
        let ans = normalized_tokens(a);
        !ans.is_empty() && q.windows(ans.len()).any(|w| w == ans.as_slice())
    })
}

fn string_array(value: &serde_json::Value, key: &'static str) -> Result<Vec<String>, PipelineError> {
    value
        .get(key)
        .and_then(|v| v.as_array())
        .and_then(|arr| {
            arr.iter()
                .map(|x| x.as_str().map(|s| s.to_string()))
                .collect::<Option<Vec<_>>>()
        })
        .ok_or(PipelineError::MissingField(key))
}

/// Run the three-step injection prompt for one QA pair and parse the fenced
/// JSON object `{personal information, question, answer}`.
pub fn inject_privacy(
    qa: &QaPair,
    gen: &dyn Agent,
    templates: &PromptTemplates,
    params: &GenerationParams,
    provenance: Provenance,
) -> Result<PrivQaItem, PipelineError> {
    let answer_json = serde_json::to_string(&qa.answers).expect("answers serialize");
    let prompt = {
        let t = &templates.synth_inject;
        for placeholder in ["{question}", "{answer}"] {
            if !t.contains(placeholder) {
                return Err(TemplateError::MissingPlaceholder {
                    name: "synth_inject",
                    placeholder: if placeholder == "{question}" { "{question}" } else { "{answer}" },
                }
                .into());
            }
        }
        t.replace("{question}", &qa.question).replace("{answer}", &answer_json)
    };
    let raw = gen.generate(&[ChatMessage::system(prompt)], params)?;
    let value = last_fenced_json(&raw).ok_or(PipelineError::ParseFailure)?;

    let obj = value.as_object().ok_or(PipelineError::ParseFailure)?;
    for key in obj.keys() {
        if key != "personal information" && key != "question" && key != "answer" {
            return Err(PipelineError::ExtraKeys);
        }
    }
    let privacy_items = string_array(&value, "personal information")?;
    let question = value
        .get("question")
        .and_then(|v| v.as_str())
        .map(|s| s.to_string())
        .ok_or(PipelineError::MissingField("question"))?;
    let answers = string_array(&value, "answer")?;
    if privacy_items.is_empty() {
        return Err(PipelineError::EmptyPrivacy);
    }
    if answers.is_empty() {
        return Err(PipelineError::MissingField("answer"));
    }
    Ok(PrivQaItem {
        question,
        answers,
        privacy_items,
        source: qa.source.clone(),
        provenance,
        raw_gen: match provenance {
            Provenance::LlmGenerated => Some(raw),
            Provenance::RuleMock => None,
        },
    })
}

/// Filter one item: true iff the checker judges the answer unchanged and the
/// verbatim-answer scan passes. The scan short-circuits without a checker
/// call.
pub fn filter_item(
    original: &QaPair,
    item: &PrivQaItem,
    checker: &dyn Agent,
    templates: &PromptTemplates,
    params: &GenerationParams,
) -> Result<bool, PipelineError> {
    if answer_revealed(&item.question, &item.answers) {
        return Ok(false);
    }
    let answer = item.answers.first().cloned().unwrap_or_default();
    let prompt = templates
        .synth_check
        .replace("{answer}", &answer)
        .replace("{question}", &original.question)
        .replace("{question-privacy}", &item.question);
    let raw = checker.generate(&[ChatMessage::system(prompt)], params)?;
    let value = last_fenced_json(&raw).ok_or(PipelineError::CheckerUnparseable)?;
    match value.get("judgment").and_then(|v| v.as_bool()) {
        Some(j) => Ok(j),
        None => Err(PipelineError::CheckerUnparseable),
    }
}

/// Corpus statistics in the dataset-table shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub samples: usize,
    pub total_privacy_items: usize,
    /// Whitespace-token count averaged over accepted questions.
    pub avg_input_tokens: f64,
    pub rejection_breakdown: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub items: Vec<PrivQaItem>,
    pub stats: SynthStats,
}

fn rejection_key(err: &PipelineError) -> &'static str {
    match err {
        PipelineError::ParseFailure => "parse_failure",
        PipelineError::MissingField(_) => "missing_field",
        PipelineError::ExtraKeys => "extra_keys",
        PipelineError::EmptyPrivacy => "empty_privacy",
        PipelineError::Agent(_) => "agent_error",
        PipelineError::Template(_) => "template_error",
        PipelineError::CheckerUnparseable => "checker_error",
    }
}

enum ItemOutcome {
    Accepted(Box<PrivQaItem>),
    Rejected(&'static str),
}

fn process_one(
    qa: &QaPair,
    gen: &dyn Agent,
    checker: &dyn Agent,
    templates: &PromptTemplates,
    params: &GenerationParams,
    provenance: Provenance,
) -> ItemOutcome {
    let item = match inject_privacy(qa, gen, templates, params, provenance) {
        Ok(item) => item,
        Err(err) => return ItemOutcome::Rejected(rejection_key(&err)),
    };
    match filter_item(qa, &item, checker, templates, params) {
        Ok(true) => ItemOutcome::Accepted(Box::new(item)),
        Ok(false) => {
            if answer_revealed(&item.question, &item.answers) {
                ItemOutcome::Rejected("answer_revealed")
            } else {
                ItemOutcome::Rejected("checker_false")
            }
        }
        Err(err) => ItemOutcome::Rejected(rejection_key(&err)),
    }
}

/// Run injection + filtering over a stream of QA pairs on a bounded work
/// pool. One bad item never aborts the stream; failures land in the
/// rejection breakdown. Output keeps the input order.
pub fn synthesize_corpus(
    inputs: &[QaPair],
    gen: &dyn Agent,
    checker: &dyn Agent,
    templates: &PromptTemplates,
    params: &GenerationParams,
    provenance: Provenance,
    concurrency: usize,
) -> SynthOutcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let outcomes: Vec<ItemOutcome> = pool.install(|| {
        use rayon::prelude::*;
        inputs
            .par_iter()
            .map(|qa| process_one(qa, gen, checker, templates, params, provenance))
            .collect()
    });

    let mut items = Vec::new();
    let mut rejection: BTreeMap<String, usize> = BTreeMap::new();
    let mut token_sum = 0usize;
    let mut privacy_sum = 0usize;
    for outcome in outcomes {
        match outcome {
            ItemOutcome::Accepted(item) => {
                token_sum += item.question.split_whitespace().count();
                privacy_sum += item.privacy_items.len();
                items.push(*item);
            }
            ItemOutcome::Rejected(key) => {
                *rejection.entry(key.to_string()).or_default() += 1;
            }
        }
    }

    let samples = items.len();
    SynthOutcome {
        stats: SynthStats {
            samples,
            total_privacy_items: privacy_sum,
            avg_input_tokens: if samples == 0 { 0.0 } else { token_sum as f64 / samples as f64 },
            rejection_breakdown: rejection,
        },
        items,
    }
}
