//! Easy/hard labeling: a query is easy iff the local model answers it
//! correctly without any assistance. Labels feed the efficiency penalty and
//! the interaction-necessity score, and are cached to disk keyed by
//! (model tag, probe count, rule).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Agent, PromptTemplates};
use crate::data::{read_jsonl, write_jsonl, IoError, Query};
use crate::orchestrator::{run_episode, EpisodeConfig};
use crate::rewards::quality_reward;

/// How probe successes map to the easy bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Easy iff at least one probe succeeds.
    Any,
    /// Easy iff strictly more than half the probes succeed.
    Majority,
}

impl LabelRule {
    pub fn is_easy(self, successes: usize, probes: usize) -> bool {
        match self {
            LabelRule::Any => successes >= 1,
            LabelRule::Majority => 2 * successes > probes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyLabel {
    pub query_id: String,
    pub is_easy: bool,
    pub probes: usize,
    pub successes: usize,
    pub model_tag: String,
    pub rule: LabelRule,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("probe episode for {query_id} issued a request; solo mode violated")]
    SoloViolation { query_id: String },
    #[error("agent failed while profiling {query_id}: {message}")]
    AgentFailure { query_id: String, message: String },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Probe one query with `k` independent solo episodes. The local agent must
/// already be in solo mode (no message emission); a probe that requests
/// anyway is an error, not a label.
pub fn profile(
    q: &Query,
    local: &dyn Agent,
    cfg: &EpisodeConfig,
    templates: &PromptTemplates,
    k: usize,
    rule: LabelRule,
    model_tag: &str,
) -> Result<DifficultyLabel, ProfileError> {
    assert!(k >= 1, "probe count must be at least 1");
    let mut successes = 0usize;
    for probe in 0..k {
        let mut probe_cfg = cfg.clone();
        probe_cfg.params.seed = cfg.params.seed.map(|s| s.wrapping_add(probe as u64));
        // The cloud side must never be consulted during profiling.
        let rec = run_episode(q, local, &NoCloud, &probe_cfg, templates);
        if rec.failed {
            return Err(ProfileError::AgentFailure {
                query_id: q.id.clone(),
                message: rec.failure.unwrap_or_default(),
            });
        }
        if rec.n_requests > 0 {
            return Err(ProfileError::SoloViolation { query_id: q.id.clone() });
        }
        if let Some(pred) = rec.predicted_answer.as_deref() {
            if quality_reward::<f64>(pred, &q.answers) == 1.0 {
                successes += 1;
            }
        }
    }
    Ok(DifficultyLabel {
        query_id: q.id.clone(),
        is_easy: rule.is_easy(successes, k),
        probes: k,
        successes,
        model_tag: model_tag.to_string(),
        rule,
    })
}

/// Sentinel cloud agent: a solo probe must never reach it.
struct NoCloud;

impl Agent for NoCloud {
    fn generate(
        &self,
        _messages: &[crate::agents::ChatMessage],
        _params: &crate::agents::GenerationParams,
    ) -> Result<String, crate::agents::AgentError> {
        Err(crate::agents::AgentError::InvalidRequest(
            "solo probe attempted a cloud call".into(),
        ))
    }
    fn tag(&self) -> String {
        "no-cloud".into()
    }
}

fn cache_valid(label: &DifficultyLabel, model_tag: &str, k: usize, rule: LabelRule) -> bool {
    label.model_tag == model_tag && label.probes == k && label.rule == rule
}

/// Profile a dataset, reusing any cached labels whose (model tag, k, rule)
/// key matches. Probes for cache misses run on a work pool; the refreshed
/// cache is written back atomically.
#[allow(clippy::too_many_arguments)]
pub fn profile_dataset(
    queries: &[Query],
    local: &dyn Agent,
    cfg: &EpisodeConfig,
    templates: &PromptTemplates,
    k: usize,
    rule: LabelRule,
    model_tag: &str,
    cache_path: Option<&Path>,
    concurrency: usize,
) -> Result<HashMap<String, DifficultyLabel>, ProfileError> {
    let mut cached: HashMap<String, DifficultyLabel> = HashMap::new();
    if let Some(path) = cache_path {
        if path.exists() {
            for label in read_jsonl::<DifficultyLabel>(path)? {
                if cache_valid(&label, model_tag, k, rule) {
                    cached.insert(label.query_id.clone(), label);
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    let labels: HashMap<String, DifficultyLabel> = pool.install(|| {
        use rayon::prelude::*;
        queries
            .par_iter()
            .map(|q| {
                let label = match cached.get(&q.id) {
                    Some(hit) => hit.clone(),
                    None => profile(q, local, cfg, templates, k, rule, model_tag)?,
                };
                Ok((q.id.clone(), label))
            })
            .collect::<Result<_, ProfileError>>()
    })?;

    if let Some(path) = cache_path {
        let mut rows: Vec<&DifficultyLabel> = labels.values().collect();
        rows.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        write_jsonl(path, &rows)?;
    }
    Ok(labels)
}
