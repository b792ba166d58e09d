//! Episode driver: alternate local-model generation and cloud-model feedback
//! under turn and token budgets, producing a trajectory and the episode facts
//! the reward path consumes.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::agents::{
    classify_reply, render_cloud_prompt, render_local_prompt, Agent, AgentError, ChatMessage,
    GenerationParams, PromptTemplates,
};
use crate::data::Query;
use crate::rewards::RewardBreakdown;
use crate::trajectory::{parse, serialize, IncompleteReason, Segment, Trajectory, TrajectoryOutcome};

/// Per-episode limits. `n_max` bounds message turns; token budgets count
/// whitespace-separated symbols for string agents (token policies count
/// exactly).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub n_max: usize,
    pub local_token_budget: usize,
    pub cloud_token_budget: usize,
    pub params: GenerationParams,
    /// Appended to the last agent reply once `n_max` is reached, instructing
    /// the local model to conclude. `None` for token-level policies, which
    /// enforce the limit grammatically.
    #[serde(default)]
    pub force_answer_suffix: Option<String>,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            n_max: 8,
            local_token_budget: 2048,
            cloud_token_budget: 512,
            params: GenerationParams::default(),
            force_answer_suffix: Some(
                " No further requests are possible; reply with your final answer now.".to_string(),
            ),
        }
    }
}

/// One finished episode, in the JSONL shape it persists to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub query_id: String,
    pub raw_text: String,
    /// Parsed segments when the trajectory is complete.
    pub segments: Option<Vec<Segment>>,
    #[serde(default)]
    pub incomplete: Option<IncompleteReason>,
    #[serde(rename = "n_r")]
    pub n_requests: usize,
    pub need_count: usize,
    pub requests: Vec<String>,
    /// Aligned with `requests`: did the cloud ask for context on that turn?
    #[serde(default)]
    pub request_needed_context: Vec<bool>,
    pub predicted_answer: Option<String>,
    pub truncated: bool,
    #[serde(default)]
    pub cloud_truncated: bool,
    pub failed: bool,
    #[serde(default)]
    pub failure: Option<String>,
    pub wall_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardBreakdown<f64>>,
}

impl EpisodeRecord {
    pub fn outcome(&self) -> TrajectoryOutcome {
        match &self.segments {
            Some(segments) => TrajectoryOutcome::Complete(Trajectory {
                segments: segments.clone(),
                query_id: self.query_id.clone(),
            }),
            None => TrajectoryOutcome::Incomplete {
                raw: self.raw_text.clone(),
                reason: self
                    .incomplete
                    .clone()
                    .unwrap_or(IncompleteReason::BudgetExhausted),
            },
        }
    }

    pub fn is_complete(&self) -> bool {
        self.segments.is_some()
    }
}

fn ws_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Close an unterminated trailing block. Remote chat APIs strip the stop
/// sequence from the returned text, so a chunk that opened `<message>` or
/// `<answer>` without closing it is completed here.
fn reappend_stop(chunk: &str) -> String {
    let mut out = chunk.to_string();
    for (open, close) in [("<message>", "</message>"), ("<answer>", "</answer>")] {
        if let Some(idx) = out.rfind(open) {
            if !out[idx..].contains(close) {
                out.push_str(close);
                return out;
            }
        }
    }
    out
}

enum ChunkEnd {
    Message(String),
    Answer,
    Neither,
}

fn chunk_end(chunk: &str) -> ChunkEnd {
    let msg = chunk.rfind("</message>");
    let ans = chunk.rfind("</answer>");
    match (msg, ans) {
        (Some(m), Some(a)) if a > m => ChunkEnd::Answer,
        (_, Some(_)) if msg.is_none() => ChunkEnd::Answer,
        (Some(m), _) => {
            let open = chunk[..m].rfind("<message>").map(|i| i + "<message>".len());
            match open {
                Some(start) => ChunkEnd::Message(chunk[start..m].to_string()),
                None => ChunkEnd::Neither,
            }
        }
        _ => ChunkEnd::Neither,
    }
}

/// Run one collaboration episode. Failures are recorded on the episode, not
/// dropped: local-agent errors end the episode as failed, cloud errors inject
/// an empty information reply and flag the record.
pub fn run_episode(
    q: &Query,
    local: &dyn Agent,
    cloud: &dyn Agent,
    cfg: &EpisodeConfig,
    templates: &PromptTemplates,
) -> EpisodeRecord {
    let start = Instant::now();
    let mut record = EpisodeRecord {
        query_id: q.id.clone(),
        raw_text: String::new(),
        segments: None,
        incomplete: None,
        n_requests: 0,
        need_count: 0,
        requests: Vec::new(),
        request_needed_context: Vec::new(),
        predicted_answer: None,
        truncated: false,
        cloud_truncated: false,
        failed: false,
        failure: None,
        wall_ms: 0,
    reward: None,
    };

    let base_messages = match render_local_prompt(q, templates) {
        Ok(m) => m,
        Err(err) => {
            record.failed = true;
            record.failure = Some(err.to_string());
            record.wall_ms = start.elapsed().as_millis() as u64;
            return record;
        }
    };

    let mut raw = String::new();
    let mut history: Vec<(String, String)> = Vec::new();
    let mut local_tokens = 0usize;
    let mut outcome: Option<IncompleteReason> = None;

    let mut local_params = cfg.params.clone();
    local_params.stop = vec!["</message>".into(), "</answer>".into()];

    // One extra iteration allows the forced final answer after n_max turns.
    'episode: for _turn in 0..=cfg.n_max {
        let mut messages = base_messages.clone();
        if !raw.is_empty() {
            messages.push(ChatMessage::assistant(raw.clone()));
        }
        let mut params = local_params.clone();
        params.seed = cfg.params.seed;
        let chunk = match local.generate(&messages, &params) {
            Ok(c) => reappend_stop(&c),
            Err(AgentError::BudgetExceeded { partial }) => {
                raw.push_str(&partial);
                record.truncated = true;
                outcome = Some(IncompleteReason::BudgetExhausted);
                break 'episode;
            }
            Err(err) => {
                record.failed = true;
                record.failure = Some(err.to_string());
                outcome = Some(IncompleteReason::BudgetExhausted);
                break 'episode;
            }
        };
        local_tokens += ws_tokens(&chunk);
        raw.push_str(&chunk);
        if local_tokens > cfg.local_token_budget {
            record.truncated = true;
            outcome = Some(IncompleteReason::BudgetExhausted);
            break 'episode;
        }

        match chunk_end(&chunk) {
            ChunkEnd::Answer => break 'episode,
            ChunkEnd::Neither => {
                record.truncated = true;
                outcome = Some(IncompleteReason::BudgetExhausted);
                break 'episode;
            }
            ChunkEnd::Message(request) => {
                if record.n_requests == cfg.n_max {
                    // The forced final generation still tried to request.
                    outcome = Some(IncompleteReason::TurnLimit);
                    break 'episode;
                }
                record.n_requests += 1;
                record.requests.push(request.clone());

                let cloud_messages = render_cloud_prompt(&history, Some(&request), templates);
                let mut cloud_params = cfg.params.clone();
                cloud_params.max_tokens = cfg.cloud_token_budget;
                cloud_params.stop.clear();
                let (mut payload, reply_raw) = match cloud
                    .generate(&cloud_messages, &cloud_params)
                    .and_then(|raw_reply| {
                        classify_reply(&raw_reply)
                            .map(|class| (class, raw_reply.clone()))
                            .map_err(|e| AgentError::MalformedResponse(e.to_string()))
                    }) {
                    Ok((class, raw_reply)) => {
                        if class.is_need() {
                            record.need_count += 1;
                        }
                        record.request_needed_context.push(class.is_need());
                        (class.payload().to_string(), raw_reply)
                    }
                    Err(err) => {
                        record.failed = true;
                        record.failure = Some(err.to_string());
                        record.request_needed_context.push(false);
                        (String::new(), String::new())
                    }
                };
                // Reply-side budget: truncate and flag.
                if ws_tokens(&payload) > cfg.cloud_token_budget {
                    payload = payload
                        .split_whitespace()
                        .take(cfg.cloud_token_budget)
                        .collect::<Vec<_>>()
                        .join(" ");
                    record.cloud_truncated = true;
                }
                history.push((request, reply_raw));
                if record.n_requests == cfg.n_max {
                    if let Some(suffix) = &cfg.force_answer_suffix {
                        payload.push_str(suffix);
                    }
                }
                raw.push_str(&format!("<agent-reply>{payload}</agent-reply>"));
            }
        }
    }

    record.raw_text = raw.clone();
    match outcome {
        Some(reason) => {
            record.incomplete = Some(reason);
        }
        None => match parse(&raw) {
            Ok(t) => {
                record.predicted_answer = t.answer_text().map(|s| s.trim().to_string());
                debug_assert_eq!(t.n_requests(), record.n_requests);
                record.raw_text = serialize(&t).unwrap_or(raw);
                record.segments = Some(t.segments);
            }
            Err(err) => {
                record.incomplete = Some(IncompleteReason::Malformed(err));
            }
        },
    }
    record.wall_ms = start.elapsed().as_millis() as u64;
    record
}

/// Run a batch of episodes on a bounded work pool. Output order matches the
/// input order and, with seeded deterministic agents, is independent of the
/// concurrency level.
pub fn run_batch(
    queries: &[Query],
    local: &dyn Agent,
    cloud: &dyn Agent,
    cfg: &EpisodeConfig,
    templates: &PromptTemplates,
    concurrency: usize,
) -> Vec<EpisodeRecord> {
    assert!(concurrency >= 1, "concurrency must be at least 1");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency)
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        queries
            .par_iter()
            .enumerate()
            .map(|(idx, q)| {
                let mut ep_cfg = cfg.clone();
                ep_cfg.params.seed = cfg.params.seed.map(|s| s.wrapping_add(idx as u64));
                run_episode(q, local, cloud, &ep_cfg, templates)
            })
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::mock::{FailingAgent, Fact, FactTable, MockCloudAgent, ScriptedLocalAgent};

    fn titanic_world() -> (Vec<Query>, FactTable) {
        let queries = vec![
            Query {
                privacy_items: vec!["The user's favorite movie is Titanic.".into()],
                source: "toy".into(),
                ..Query::new("q0", "Who directed the user's favorite movie, Titanic?", vec!["James Cameron".into()])
            },
            Query::new("q1", "What is the capital of France?", vec!["Paris".into()]),
        ];
        let table = FactTable {
            facts: vec![
                Fact {
                    subject: "Titanic".into(),
                    relation: "directed".into(),
                    object: "James Cameron".into(),
                    cloud_known: true,
                    keywords: vec!["director".into()],
                },
                Fact {
                    subject: "France".into(),
                    relation: "capital".into(),
                    object: "Paris".into(),
                    cloud_known: true,
                    keywords: vec![],
                },
            ],
        };
        (queries, table)
    }

    #[test]
    fn solo_episode_has_no_requests() {
        let (queries, table) = titanic_world();
        let local = ScriptedLocalAgent::solo(
            queries.iter().map(|q| (q.question.clone(), q.answers[0].clone())),
        );
        let cloud = MockCloudAgent::new(table);
        let rec = run_episode(&queries[1], &local, &cloud, &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.is_complete());
        assert_eq!(rec.n_requests, 0);
        assert_eq!(rec.predicted_answer.as_deref(), Some("Paris"));
        assert!(!rec.failed);
    }

    #[test]
    fn forward_episode_requests_once_and_answers_from_reply() {
        let (queries, table) = titanic_world();
        let local = ScriptedLocalAgent::forward_raw();
        let cloud = MockCloudAgent::new(table);
        let rec = run_episode(&queries[0], &local, &cloud, &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.is_complete());
        assert_eq!(rec.n_requests, 1);
        assert_eq!(rec.need_count, 0);
        assert_eq!(rec.predicted_answer.as_deref(), Some("James Cameron"));
        assert_eq!(rec.requests.len(), 1);
        assert!(rec.requests[0].contains("Titanic"));
    }

    #[test]
    fn slot_incomplete_request_counts_need() {
        let (_, table) = titanic_world();
        let q = Query::new("q2", "Where does the user's cousin live?", vec!["Florida".into()]);
        let local = ScriptedLocalAgent::forward_raw();
        let cloud = MockCloudAgent::new(table);
        let rec = run_episode(&q, &local, &cloud, &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.is_complete());
        assert_eq!(rec.need_count, 1);
    }

    #[test]
    fn cloud_failure_is_flagged_not_dropped() {
        let q = Query::new("q", "anything?", vec!["x".into()]);
        let local = ScriptedLocalAgent::forward_raw();
        let rec = run_episode(&q, &local, &FailingAgent, &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.failed);
        assert!(rec.failure.is_some());
        // Episode still completed with the injected empty reply.
        assert!(rec.is_complete());
    }

    #[test]
    fn batch_is_order_preserving_and_concurrency_invariant() {
        let (queries, table) = titanic_world();
        let local = ScriptedLocalAgent::forward_raw();
        let cloud = MockCloudAgent::new(table);
        let templates = PromptTemplates::default();
        let cfg = EpisodeConfig::default();
        let a = run_batch(&queries, &local, &cloud, &cfg, &templates, 1);
        let b = run_batch(&queries, &local, &cloud, &cfg, &templates, 3);
        assert_eq!(a.len(), 2);
        let strip = |mut r: Vec<EpisodeRecord>| {
            for rec in &mut r {
                rec.wall_ms = 0;
            }
            r
        };
        assert_eq!(strip(a), strip(b));
    }

    #[test]
    fn empty_batch_is_empty() {
        let (_, table) = titanic_world();
        let local = ScriptedLocalAgent::forward_raw();
        let cloud = MockCloudAgent::new(table);
        let out = run_batch(&[], &local, &cloud, &EpisodeConfig::default(), &PromptTemplates::default(), 2);
        assert!(out.is_empty());
    }

    #[test]
    fn budget_exceeded_marks_truncation() {
        struct Windbag;
        impl Agent for Windbag {
            fn generate(&self, _m: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                Err(AgentError::BudgetExceeded { partial: "<think>endless".into() })
            }
            fn tag(&self) -> String {
                "windbag".into()
            }
        }
        let q = Query::new("q", "anything?", vec!["x".into()]);
        let (_, table) = titanic_world();
        let rec = run_episode(&q, &Windbag, &MockCloudAgent::new(table), &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.truncated);
        assert!(!rec.is_complete());
        assert!(matches!(rec.incomplete, Some(crate::trajectory::IncompleteReason::BudgetExhausted)));
    }

    #[test]
    fn local_token_budget_truncates_long_generations() {
        struct Rambler;
        impl Agent for Rambler {
            fn generate(&self, _m: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                let filler = "word ".repeat(64);
                Ok(format!("<think>{filler}</think><message>q</message>"))
            }
            fn tag(&self) -> String {
                "rambler".into()
            }
        }
        let q = Query::new("q", "anything?", vec!["x".into()]);
        let (_, table) = titanic_world();
        let cfg = EpisodeConfig { local_token_budget: 32, ..EpisodeConfig::default() };
        let rec = run_episode(&q, &Rambler, &MockCloudAgent::new(table), &cfg, &PromptTemplates::default());
        assert!(rec.truncated);
    }

    #[test]
    fn batch_isolates_per_query_failures() {
        // Cloud that fails only on requests naming the poisoned entity.
        struct Picky;
        impl Agent for Picky {
            fn generate(&self, messages: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                let req = &messages.last().unwrap().content;
                if req.contains("Atlantis") {
                    Err(AgentError::Transport { status: Some(500), message: "boom".into() })
                } else {
                    Ok("<information>fine</information>".into())
                }
            }
            fn tag(&self) -> String {
                "picky".into()
            }
        }
        let queries = vec![
            Query::new("ok1", "Tell me about France?", vec!["fine".into()]),
            Query::new("bad", "Tell me about Atlantis?", vec!["x".into()]),
            Query::new("ok2", "Tell me about Titanic?", vec!["fine".into()]),
        ];
        let local = ScriptedLocalAgent::forward_raw();
        let records = run_batch(&queries, &local, &Picky, &EpisodeConfig::default(), &PromptTemplates::default(), 2);
        assert!(!records[0].failed);
        assert!(records[1].failed);
        assert!(!records[2].failed);
        assert_eq!(records[0].predicted_answer.as_deref(), Some("fine"));
    }

    #[test]
    fn turn_limit_forces_closure_or_marks_the_episode() {
        // Obedient: keeps asking until told to stop, then answers.
        struct Obedient;
        impl Agent for Obedient {
            fn generate(&self, messages: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                let partial = crate::agents::prompts::partial_trajectory(messages);
                if partial.contains("final answer") {
                    Ok("<think>ok</think><answer>done</answer>".into())
                } else {
                    Ok("<think>more</think><message>again?</message>".into())
                }
            }
            fn tag(&self) -> String {
                "obedient".into()
            }
        }
        // Stubborn: always asks, ignoring the closure instruction.
        struct Stubborn;
        impl Agent for Stubborn {
            fn generate(&self, _m: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                Ok("<think>more</think><message>again?</message>".into())
            }
            fn tag(&self) -> String {
                "stubborn".into()
            }
        }

        let (_, table) = titanic_world();
        let q = Query::new("q", "anything?", vec!["done".into()]);
        let cfg = EpisodeConfig { n_max: 3, ..EpisodeConfig::default() };

        let cloud = MockCloudAgent::new(table);
        let rec = run_episode(&q, &Obedient, &cloud, &cfg, &PromptTemplates::default());
        assert!(rec.is_complete());
        assert_eq!(rec.n_requests, 3, "stops asking at the limit");
        assert_eq!(rec.predicted_answer.as_deref(), Some("done"));

        let rec = run_episode(&q, &Stubborn, &cloud, &cfg, &PromptTemplates::default());
        assert!(!rec.is_complete());
        assert_eq!(rec.n_requests, 3, "turn budget holds");
        assert!(matches!(rec.incomplete, Some(crate::trajectory::IncompleteReason::TurnLimit)));
    }

    #[test]
    fn asymmetry_cloud_never_sees_query_or_privacy() {
        // Spy cloud captures every prompt it receives.
        use std::sync::Mutex;
        struct SpyCloud(Mutex<Vec<String>>);
        impl Agent for SpyCloud {
            fn generate(&self, messages: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                let mut log = self.0.lock().unwrap();
                for m in messages {
                    log.push(m.content.clone());
                }
                Ok("<information>ok</information>".into())
            }
            fn tag(&self) -> String {
                "spy".into()
            }
        }

        struct CleanRequester;
        impl Agent for CleanRequester {
            fn generate(&self, messages: &[ChatMessage], _p: &GenerationParams) -> Result<String, AgentError> {
                let partial = crate::agents::prompts::partial_trajectory(messages);
                if partial.is_empty() {
                    Ok("<think>t</think><message>who directed Titanic?</message>".into())
                } else {
                    Ok("<think>t</think><answer>done</answer>".into())
                }
            }
            fn tag(&self) -> String {
                "clean".into()
            }
        }

        let q = Query {
            privacy_items: vec!["The user's cousin lives in Florida.".into()],
            ..Query::new("q", "Secret question about the user's cousin?", vec!["Florida".into()])
        };
        let spy = SpyCloud(Mutex::new(Vec::new()));
        let rec = run_episode(&q, &CleanRequester, &spy, &EpisodeConfig::default(), &PromptTemplates::default());
        assert!(rec.is_complete());
        let log = spy.0.into_inner().unwrap();
        assert!(!log.is_empty());
        for content in log {
            assert!(!content.contains(&q.question));
            for item in &q.privacy_items {
                assert!(!content.contains(item));
            }
        }
    }
}
