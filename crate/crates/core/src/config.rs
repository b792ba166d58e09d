//! Run configuration: one JSON tree with documented defaults for every
//! field. Unknown keys are rejected, command-line flags override file
//! values, and every run writes its resolved configuration next to its
//! outputs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::GenerationParams;
use crate::difficulty::LabelRule;
use crate::orchestrator::EpisodeConfig;
use crate::rewards::{PlacementMode, RewardWeights};
use crate::rl::gae::{GaeConfig, LambdaMode};
use crate::rl::loss::ClipConfig;
use crate::rl::rollout::SamplerCfg;
use crate::rl::train::{StopRule, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeSettings {
    pub n_max: usize,
    pub local_token_budget: usize,
    pub cloud_token_budget: usize,
    pub temperature: f64,
    pub max_tokens: usize,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        EpisodeSettings {
            n_max: 8,
            local_token_budget: 2048,
            cloud_token_budget: 512,
            temperature: 1.0,
            max_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSettings {
    pub alpha: f64,
    pub beta: f64,
    pub placement: PlacementMode,
}

impl Default for RewardSettings {
    fn default() -> Self {
        RewardSettings { alpha: 0.3, beta: 0.2, placement: PlacementMode::TerminalOnly }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaeSettings {
    pub gamma: f64,
    /// Fixed λ when set; otherwise the length-adaptive rule applies.
    pub lambda: Option<f64>,
    /// Desk-scale trajectories are a dozen tokens, so the trainer default
    /// keeps `α·L` well above 1 (λ ≈ 0.9); at the 0.05 used for
    /// thousand-token models it would clamp λ to 0 here.
    pub alpha_len: f64,
    pub value_lambda: f64,
}

impl Default for GaeSettings {
    fn default() -> Self {
        GaeSettings { gamma: 1.0, lambda: None, alpha_len: 1.0, value_lambda: 1.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipSettings {
    pub eps_low: f64,
    pub eps_high: f64,
}

impl Default for ClipSettings {
    fn default() -> Self {
        ClipSettings { eps_low: 0.2, eps_high: 0.28 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub steps: usize,
    pub warmstart_steps: usize,
    pub batch_episodes: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub hidden: usize,
    pub demo_solo_prob: f64,
    pub demo_flub_prob: f64,
    pub demo_clean_prob: f64,
    pub eval_every: usize,
    /// 0 keeps the environment's structural difficulty labels; N > 0
    /// re-profiles the current policy in solo mode every N updates.
    pub label_refresh: usize,
    pub think_cap: usize,
    pub msg_cap: usize,
    pub ans_cap: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            steps: 3000,
            warmstart_steps: 300,
            batch_episodes: 64,
            policy_lr: 1e-3,
            value_lr: 2e-3,
            hidden: 64,
            demo_solo_prob: 0.3,
            demo_flub_prob: 0.0,
            demo_clean_prob: 0.1,
            eval_every: 50,
            label_refresh: 0,
            think_cap: 2,
            msg_cap: 6,
            ans_cap: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DifficultySettings {
    pub k: usize,
    pub rule: LabelRule,
}

impl Default for DifficultySettings {
    fn default() -> Self {
        DifficultySettings { k: 1, rule: LabelRule::Any }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSettings {
    /// Model name sent to remote endpoints.
    pub model: String,
    /// Directory of prompt template overrides.
    pub templates_dir: Option<String>,
    pub max_retries: u32,
}

impl Default for AgentSettings {
    fn default() -> Self {
        AgentSettings { model: "default".into(), templates_dir: None, max_retries: 2 }
    }
}

/// The whole configuration tree.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub concurrency: Concurrency,
    pub episode: EpisodeSettings,
    pub rewards: RewardSettings,
    pub gae: GaeSettings,
    pub clip: ClipSettings,
    pub train: TrainSettings,
    pub difficulty: DifficultySettings,
    pub agents: AgentSettings,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Concurrency(pub usize);

impl Default for Concurrency {
    fn default() -> Self {
        Concurrency(1)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    /// Write the resolved configuration next to a run's outputs.
    pub fn write_snapshot(&self, path: &Path) -> Result<(), crate::data::IoError> {
        let body = serde_json::to_string_pretty(self).expect("config serializes");
        crate::data::write_atomic(path, body.as_bytes())
    }

    pub fn generation_params(&self) -> GenerationParams {
        GenerationParams {
            temperature: self.episode.temperature,
            max_tokens: self.episode.max_tokens,
            stop: Vec::new(),
            seed: Some(self.seed),
        }
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            n_max: self.episode.n_max,
            local_token_budget: self.episode.local_token_budget,
            cloud_token_budget: self.episode.cloud_token_budget,
            params: self.generation_params(),
            force_answer_suffix: EpisodeConfig::default().force_answer_suffix,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights<f64> {
        RewardWeights { alpha: self.rewards.alpha, beta: self.rewards.beta }
    }

    pub fn gae_config(&self) -> GaeConfig<f64> {
        GaeConfig {
            gamma: self.gae.gamma,
            lambda_mode: match self.gae.lambda {
                Some(l) => LambdaMode::Fixed(l),
                None => LambdaMode::LengthAdaptive { alpha_len: self.gae.alpha_len },
            },
            value_lambda: self.gae.value_lambda,
        }
    }

    pub fn clip_config(&self) -> ClipConfig<f64> {
        ClipConfig { eps_low: self.clip.eps_low, eps_high: self.clip.eps_high }
    }

    pub fn train_config(&self, stop: Option<StopRule>) -> TrainConfig<f64> {
        TrainConfig {
            steps: self.train.steps,
            warmstart_steps: self.train.warmstart_steps,
            batch_episodes: self.train.batch_episodes,
            policy_lr: self.train.policy_lr,
            value_lr: self.train.value_lr,
            hidden: self.train.hidden,
            gae: self.gae_config(),
            clip: self.clip_config(),
            weights: self.reward_weights(),
            placement: self.rewards.placement,
            n_max: self.episode.n_max,
            sampler: SamplerCfg {
                think_cap: self.train.think_cap,
                msg_cap: self.train.msg_cap,
                ans_cap: self.train.ans_cap,
            },
            temperature: self.episode.temperature,
            demo_solo_prob: self.train.demo_solo_prob,
            demo_flub_prob: self.train.demo_flub_prob,
            demo_clean_prob: self.train.demo_clean_prob,
            seed: self.seed,
            concurrency: self.concurrency.0,
            eval_every: self.train.eval_every,
            label_refresh: self.train.label_refresh,
            stop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.rewards.alpha, 0.3);
        assert_eq!(back.clip.eps_low, 0.2);
        assert_eq!(back.clip.eps_high, 0.28);
    }

    #[test]
    fn unknown_keys_are_errors_with_the_key_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, "{\"rewards\": {\"alpha\": 0.1, \"alpa\": 0.2}}").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("alpa"), "error names the offending key: {msg}");
    }

    #[test]
    fn partial_file_keeps_defaults_elsewhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(&path, "{\"rewards\": {\"alpha\": 0.9}}").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.rewards.alpha, 0.9);
        assert_eq!(cfg.rewards.beta, 0.2);
        assert_eq!(cfg.episode.n_max, 8);
    }
}
