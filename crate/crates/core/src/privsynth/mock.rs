//! Deterministic rule-mock world for the synthesis pipeline: a seeded toy QA
//! corpus with known ground truth, a generator agent that applies fixed
//! reformulation templates, and a checker agent that re-derives answers from
//! the same corpus. Both agents parse the rendered prompts, so they exercise
//! the real templates end to end.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agents::{Agent, AgentError, ChatMessage, GenerationParams};
use crate::privsynth::{PrivQaItem, QaPair};
use crate::textnorm::normalize;

const PREFIX: [&str; 16] = [
    "Al", "Bren", "Cor", "Dal", "Eri", "Fen", "Gor", "Hal", "Isen", "Jor", "Kel", "Lor", "Mar",
    "Nor", "Oryn", "Pasq",
];
const MID: [&str; 8] = ["ba", "ce", "du", "fi", "go", "hu", "ki", "lo"];
const SUFFIX: [&str; 8] = ["dora", "mark", "via", "land", "stan", "onia", "heim", "gard"];
const CAP_A: [&str; 16] = [
    "Vel", "Zan", "Quor", "Tei", "Ula", "Wex", "Yor", "Rhi", "Sab", "Tol", "Una", "Vor", "Wyn",
    "Xal", "Ymir", "Zed",
];
const CAP_B: [&str; 8] = ["brook", "haven", "port", "gate", "ford", "mill", "crest", "field"];

/// Stable tiny hash for seeded per-item choices.
pub fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Generate `n` unique capital-city QA pairs from a seed. Ground truth is a
/// pure function of the name construction, so checker mocks can re-derive it.
pub fn toy_qa_corpus(n: usize, seed: u64) -> Vec<QaPair> {
    assert!(n <= PREFIX.len() * MID.len() * SUFFIX.len(), "toy corpus capped at 1024 pairs");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut combos: Vec<(usize, usize, usize)> = (0..PREFIX.len())
        .flat_map(|p| (0..MID.len()).flat_map(move |m| (0..SUFFIX.len()).map(move |s| (p, m, s))))
        .collect();
    combos.shuffle(&mut rng);
    combos
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, (p, m, s))| {
            let country = format!("{}{}{}", PREFIX[p], MID[m], SUFFIX[s]);
            let capital = format!("{}{}", CAP_A[(p + m) % CAP_A.len()], CAP_B[(s + m) % CAP_B.len()]);
            QaPair {
                question: format!("What is the capital of {country}?"),
                answers: vec![capital],
                source: if i % 2 == 0 { "toy-nq".to_string() } else { "toy-hotpot".to_string() },
            }
        })
        .collect()
}

fn last_line_value<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    let idx = prompt.rfind(marker)?;
    let rest = &prompt[idx + marker.len()..];
    Some(rest.lines().next().unwrap_or("").trim())
}

/// The fixed reformulation applied by the rule-mock generator.
pub fn rule_mock_final_question(original_question: &str) -> String {
    format!(
        "The answer to the question '{original_question}' is the final entry in the user's study notes. \
         What is the final entry in the user's study notes?"
    )
}

/// Deterministic three-step generator: fixed templates, seeded 2-or-3 item
/// privacy sets (averaging 2.8 items per sample).
#[derive(Debug, Clone)]
pub struct RuleMockGen {
    salt: u64,
}

impl RuleMockGen {
    pub fn new(salt: u64) -> Self {
        RuleMockGen { salt }
    }
}

impl Agent for RuleMockGen {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        let prompt = &messages
            .first()
            .ok_or_else(|| AgentError::InvalidRequest("empty prompt".into()))?
            .content;
        let question = last_line_value(prompt, "Question: ")
            .ok_or_else(|| AgentError::InvalidRequest("prompt lacks a question".into()))?;
        let answer_json = last_line_value(prompt, "Answer: ")
            .ok_or_else(|| AgentError::InvalidRequest("prompt lacks an answer".into()))?;
        let answers: Vec<String> = serde_json::from_str(answer_json)
            .map_err(|e| AgentError::InvalidRequest(format!("bad answer json: {e}")))?;
        let primary = answers
            .first()
            .cloned()
            .ok_or_else(|| AgentError::InvalidRequest("no answers".into()))?;

        let mut items = vec![
            format!("The user's study notes give {primary} as their final entry."),
            format!("The user's quiz book lists the question '{question}'."),
        ];
        if fnv1a(&format!("{question}#{}", self.salt)) % 10 >= 2 {
            items.push("The user's desk calendar marks the day this topic came up.".to_string());
        }
        let final_question = rule_mock_final_question(question);

        let payload = serde_json::json!({
            "personal information": items,
            "question": final_question,
            "answer": answers,
        });
        Ok(format!(
            "Step 1: generate personal information tied to the answer.\n\
             Step 2: reformulate the core fact through it.\n\
             Step 3: synthesize the combined question.\n\
             ```json\n{}\n```",
            serde_json::to_string_pretty(&payload).expect("payload serializes")
        ))
    }

    fn tag(&self) -> String {
        format!("rulemock-gen:{}", self.salt)
    }
}

/// Checker that re-derives the gold answer from the toy corpus and judges
/// whether the reformulated question still yields it.
#[derive(Debug, Clone)]
pub struct RuleCheckAgent {
    kb: HashMap<String, Vec<String>>,
}

impl RuleCheckAgent {
    pub fn from_corpus(corpus: &[QaPair]) -> Self {
        let kb = corpus
            .iter()
            .map(|qa| (normalize(&qa.question), qa.answers.clone()))
            .collect();
        RuleCheckAgent { kb }
    }

    fn judge(&self, prompt: &str) -> (bool, &'static str) {
        // Pull {answer} and {question-privacy} back out of the rendered
        // check prompt.
        let answer = match prompt
            .find("the answer ")
            .and_then(|i| prompt[i + "the answer ".len()..].split(" is the golden answer").next())
        {
            Some(a) => a.trim(),
            None => return (false, "prompt lacks an answer"),
        };
        let privacy_q = match prompt
            .rfind("new question \"")
            .map(|i| &prompt[i + "new question \"".len()..])
            .and_then(|rest| rest.split('"').next())
        {
            Some(q) => q,
            None => return (false, "prompt lacks the new question"),
        };
        // The reformulation embeds the original question in single quotes.
        let embedded = match privacy_q
            .find("the question '")
            .map(|i| &privacy_q[i + "the question '".len()..])
            .and_then(|rest| rest.split('\'').next())
        {
            Some(q) => q,
            None => return (false, "new question does not reference the original fact"),
        };
        match self.kb.get(&normalize(embedded)) {
            Some(golds) if golds.iter().any(|g| normalize(g) == normalize(answer)) => {
                (true, "answer matches the corpus ground truth")
            }
            Some(_) => (false, "answer does not match the corpus ground truth"),
            None => (false, "embedded question unknown to the corpus"),
        }
    }
}

impl Agent for RuleCheckAgent {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        let prompt = &messages
            .first()
            .ok_or_else(|| AgentError::InvalidRequest("empty prompt".into()))?
            .content;
        let (judgment, reason) = self.judge(prompt);
        Ok(format!(
            "Checking step by step.\n```json\n{{\"reason\": \"{reason}\", \"judgment\": {judgment}}}\n```"
        ))
    }

    fn tag(&self) -> String {
        "rulemock-check".to_string()
    }
}

/// Cloud fact table covering a toy capital corpus: one fact per pair, keyed
/// by the country mentioned in the question.
pub fn toy_fact_table(corpus: &[QaPair]) -> crate::agents::FactTable {
    let facts = corpus
        .iter()
        .filter_map(|qa| {
            let subject = qa
                .question
                .rsplit_once(" of ")?
                .1
                .trim_end_matches(['?', ' ', '.'])
                .to_string();
            Some(crate::agents::mock::Fact {
                subject,
                relation: "capital".into(),
                object: qa.answers.first()?.clone(),
                cloud_known: true,
                keywords: vec![],
            })
        })
        .collect();
    crate::agents::FactTable { facts }
}

/// Seeded corruption modes used to test filter soundness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Corruption {
    /// Replace the answer so the question no longer yields it.
    AnswerAltered,
    /// Embed the answer verbatim in the question.
    AnswerRevealed,
}

pub fn corrupt_item(item: &PrivQaItem, mode: Corruption) -> PrivQaItem {
    let mut out = item.clone();
    match mode {
        Corruption::AnswerAltered => {
            let altered = format!("not {}", out.answers[0]);
            out.answers[0] = altered;
        }
        Corruption::AnswerRevealed => {
            out.question = format!("{} (It is {}.)", out.question, out.answers[0]);
        }
    }
    out
}
