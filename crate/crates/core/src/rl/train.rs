//! Training loop: optional supervised warm-start from scripted
//! demonstrations (models with weak format-following never get off the
//! ground under pure RL), then iterations of fresh rollout collection, one
//! value update, and one clipped policy update.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::factworld::{FactQuery, FactWorld};
use super::gae::GaeConfig;
use super::loss::{value_loss, vapo_loss, ClipConfig, RolloutBatch, TrainError};
use super::policy::TokenPolicy;
use super::rollout::{
    collect_batch, collect_episode, mix_seed, CollectCfg, CollectedEpisode, Driver, FeatureMap,
    SamplerCfg,
};
use super::value::LinearValue;
use crate::agents::PromptTemplates;
use crate::data::write_atomic;
use crate::metrics::in_score;
use crate::num::Scalar;
use crate::rewards::{PlacementMode, RewardWeights};

/// Stop the run once a greedy held-out evaluation clears every threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StopRule {
    pub min_steps: usize,
    pub quality: f64,
    pub in_score: f64,
    pub easy_request_rate: f64,
}

#[derive(Debug, Clone)]
pub struct TrainConfig<S: Scalar> {
    /// Policy-gradient updates (after the warm-start phase).
    pub steps: usize,
    /// Supervised warm-start updates on scripted demonstrations.
    pub warmstart_steps: usize,
    pub batch_episodes: usize,
    pub policy_lr: S,
    pub value_lr: S,
    pub hidden: usize,
    pub gae: GaeConfig<S>,
    pub clip: ClipConfig<S>,
    pub weights: RewardWeights<S>,
    pub placement: PlacementMode,
    pub n_max: usize,
    pub sampler: SamplerCfg,
    pub temperature: S,
    /// Probability that a demonstration answers an easy query solo; the rest
    /// show the request mechanics.
    pub demo_solo_prob: f64,
    /// Probability that a demonstration flubs its first request and shows
    /// the retry path.
    pub demo_flub_prob: f64,
    /// Probability that a privacy-query demonstration uses the reformulated
    /// (alias-free) request phrasing.
    pub demo_clean_prob: f64,
    pub seed: u64,
    pub concurrency: usize,
    pub eval_every: usize,
    /// 0 trains against the environment's structural labels; N > 0
    /// re-profiles the policy in solo mode every N updates instead.
    pub label_refresh: usize,
    pub stop: Option<StopRule>,
}

impl<S: Scalar> Default for TrainConfig<S> {
    fn default() -> Self {
        TrainConfig {
            steps: 3000,
            warmstart_steps: 300,
            batch_episodes: 64,
            policy_lr: S::from_f64(1e-3),
            value_lr: S::from_f64(2e-3),
            hidden: 64,
            gae: GaeConfig::default(),
            clip: ClipConfig::default(),
            weights: RewardWeights::default(),
            placement: PlacementMode::TerminalOnly,
            n_max: 8,
            sampler: SamplerCfg::default(),
            temperature: S::one(),
            demo_solo_prob: 0.3,
            demo_flub_prob: 0.0,
            demo_clean_prob: 0.1,
            seed: 7,
            concurrency: 1,
            eval_every: 50,
            label_refresh: 0,
            stop: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub phase: String,
    pub mean_reward: f64,
    pub mean_format: f64,
    pub mean_quality: f64,
    pub mean_feedback: f64,
    pub mean_privacy: f64,
    pub mean_efficiency: f64,
    pub avg_turns: f64,
    pub in_score: Option<f64>,
    pub priv_sample: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
}

/// Greedy evaluation aggregates on a query set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_reward: f64,
    pub quality: f64,
    pub avg_turns: f64,
    pub in_score: Option<f64>,
    pub easy_request_rate: Option<f64>,
    pub hard_request_rate: Option<f64>,
    pub priv_sample: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub summary: EvalSummary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rows: Vec<StepStats>,
    pub evals: Vec<EvalPoint>,
    pub final_eval: EvalSummary,
    pub steps_run: usize,
}

impl TrainingReport {
    /// Write `report.jsonl` (one row per step) and `summary.json`.
    pub fn save(&self, dir: &Path) -> Result<(), crate::data::IoError> {
        crate::data::write_jsonl(&dir.join("report.jsonl"), &self.rows)?;
        let summary = serde_json::json!({
            "steps_run": self.steps_run,
            "final_eval": self.final_eval,
            "evals": self.evals,
        });
        write_atomic(
            &dir.join("summary.json"),
            serde_json::to_string_pretty(&summary).expect("summary").as_bytes(),
        )
    }
}

/// Summarize collected episodes against their structural labels.
pub fn summarize<S: Scalar>(eps: &[CollectedEpisode<S>]) -> EvalSummary {
    let n = eps.len().max(1) as f64;
    let mut labels: HashMap<String, bool> = HashMap::new();
    let mut requests: HashMap<String, usize> = HashMap::new();
    let mut easy_req = (0usize, 0usize);
    let mut hard_req = (0usize, 0usize);
    for ep in eps {
        labels.insert(ep.record.query_id.clone(), ep.easy);
        requests.insert(ep.record.query_id.clone(), ep.record.n_requests);
        let slot = if ep.easy { &mut easy_req } else { &mut hard_req };
        slot.1 += 1;
        if ep.record.n_requests > 0 {
            slot.0 += 1;
        }
    }
    EvalSummary {
        episodes: eps.len(),
        mean_reward: eps.iter().map(|e| e.breakdown.total.to_f64()).sum::<f64>() / n,
        quality: eps
            .iter()
            .map(|e| e.breakdown.components.r_quality.to_f64())
            .sum::<f64>()
            / n,
        avg_turns: eps.iter().map(|e| e.record.n_requests as f64).sum::<f64>() / n,
        in_score: in_score::<f64>(&labels, &requests).ok(),
        easy_request_rate: (easy_req.1 > 0).then(|| easy_req.0 as f64 / easy_req.1 as f64),
        hard_request_rate: (hard_req.1 > 0).then(|| hard_req.0 as f64 / hard_req.1 as f64),
        priv_sample: eps.iter().filter(|e| e.leaked).count() as f64 / n,
    }
}

fn step_stats<S: Scalar>(
    step: usize,
    phase: &str,
    eps: &[CollectedEpisode<S>],
    policy_loss: f64,
    value_loss_v: f64,
) -> StepStats {
    let n = eps.len().max(1) as f64;
    let mean = |f: &dyn Fn(&CollectedEpisode<S>) -> f64| eps.iter().map(f).sum::<f64>() / n;
    let summary = summarize(eps);
    StepStats {
        step,
        phase: phase.to_string(),
        mean_reward: summary.mean_reward,
        mean_format: mean(&|e| e.breakdown.components.r_format.to_f64()),
        mean_quality: mean(&|e| e.breakdown.components.r_quality.to_f64()),
        mean_feedback: mean(&|e| e.breakdown.components.r_feedback.to_f64()),
        mean_privacy: mean(&|e| e.breakdown.components.r_privacy.to_f64()),
        mean_efficiency: mean(&|e| e.breakdown.components.r_efficiency.to_f64()),
        avg_turns: summary.avg_turns,
        in_score: summary.in_score,
        priv_sample: summary.priv_sample,
        policy_loss,
        value_loss: value_loss_v,
    }
}

struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, seed: u64) -> Self {
        let mut c = Cycler { order: (0..n).collect(), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        c.order.shuffle(&mut c.rng);
        c
    }

    fn next_batch(&mut self, k: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            if self.pos >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

fn batch_from<S: Scalar>(eps: &mut [CollectedEpisode<S>]) -> RolloutBatch<S> {
    RolloutBatch {
        trajectories: eps.iter_mut().filter_map(|e| e.traj.take()).collect(),
    }
}

/// Supervised update toward the recorded tokens; returns the mean negative
/// log-likelihood.
fn bc_update<S: Scalar>(
    policy: &mut TokenPolicy<S>,
    opt: &mut Adam<S>,
    batch: &RolloutBatch<S>,
) -> S {
    let total: usize = batch.trajectories.iter().map(|t| t.steps.len()).sum();
    if total == 0 {
        return S::zero();
    }
    let inv = S::one() / S::from_usize(total);
    let mut grad = vec![S::zero(); policy.param_len()];
    let mut loss = S::zero();
    for traj in &batch.trajectories {
        for step in &traj.steps {
            loss = loss - policy.log_prob(&step.ctx, step.token) * inv;
            policy.accum_grad_log_prob(&step.ctx, step.token, -inv, &mut grad);
        }
    }
    let mut params = std::mem::take(&mut policy.theta);
    opt.step(&mut params, &grad);
    policy.theta = params;
    loss
}

/// Evaluate a policy greedily on a query split with structural labels.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy<S: Scalar>(
    queries: &[FactQuery],
    fmap: &Arc<FeatureMap>,
    cloud: &dyn crate::agents::Agent,
    templates: &PromptTemplates,
    policy: &Arc<TokenPolicy<S>>,
    cfg: &CollectCfg<S>,
    labels: &HashMap<String, bool>,
    seed: u64,
    concurrency: usize,
) -> EvalSummary {
    let refs: Vec<&FactQuery> = queries.iter().collect();
    let eps = collect_batch(
        &refs, fmap, cloud, templates, policy, None, cfg, labels, true, seed, concurrency,
    );
    summarize(&eps)
}

/// Full training run on a FactWorld environment. Deterministic in
/// `(cfg.seed, cfg, world)`.
pub fn train_loop<S: Scalar>(
    world: &FactWorld,
    policy: &mut TokenPolicy<S>,
    vm: &mut LinearValue<S>,
    cfg: &TrainConfig<S>,
) -> Result<TrainingReport, TrainError> {
    cfg.clip.validate()?;
    cfg.gae.validate().map_err(|e| TrainError::BadBatch(e.to_string()))?;

    let fmap = Arc::new(FeatureMap::new(Arc::clone(&world.vocab)));
    let cloud = world.cloud_agent();
    let templates = PromptTemplates::default();
    let mut train_labels = FactWorld::labels(&world.train);
    let held_labels = FactWorld::labels(&world.heldout);
    let collect_cfg = CollectCfg {
        n_max: cfg.n_max,
        sampler: cfg.sampler,
        weights: cfg.weights,
        gae: cfg.gae,
        placement: cfg.placement,
        temperature: cfg.temperature,
    };

    let mut policy_opt = Adam::new(cfg.policy_lr, policy.param_len());
    let mut value_opt = Adam::new(cfg.value_lr, vm.param_len());
    let mut cycler = Cycler::new(world.train.len(), mix_seed(cfg.seed, 0xc1c1e, 0));
    let mut rows = Vec::new();
    let mut evals = Vec::new();
    let mut step = 0usize;

    let run_eval = |policy: &TokenPolicy<S>, step: usize| {
        let snapshot = Arc::new(policy.clone());
        evaluate_policy(
            &world.heldout,
            &fmap,
            &cloud,
            &templates,
            &snapshot,
            &collect_cfg,
            &held_labels,
            mix_seed(cfg.seed, 0xe7a1, step as u64),
            cfg.concurrency,
        )
    };

    // Warm-start: behavior cloning on scripted demonstrations. The logged
    // statistics come from the learning policy's own rollouts so the curve
    // reflects it throughout, not the demonstrations.
    for ws in 0..cfg.warmstart_steps {
        let idxs = cycler.next_batch(cfg.batch_episodes);
        let mut eps: Vec<CollectedEpisode<S>> = idxs
            .iter()
            .enumerate()
            .map(|(j, &qi)| {
                let fq = &world.train[qi];
                collect_episode(
                    fq,
                    &fmap,
                    &cloud,
                    &templates,
                    Driver::Expert {
                        solo_prob: cfg.demo_solo_prob,
                        flub_prob: cfg.demo_flub_prob,
                        clean_prob: cfg.demo_clean_prob,
                    },
                    None,
                    &collect_cfg,
                    train_labels.get(&fq.query.id).copied().unwrap_or(fq.easy),
                    mix_seed(cfg.seed, 0xdead + ws as u64, j as u64),
                )
            })
            .collect();
        let batch = batch_from(&mut eps);
        let bc_loss = bc_update(policy, &mut policy_opt, &batch);
        let (v_loss, v_grad) = value_loss(vm, &batch)?;
        value_opt.step(vm.phi.as_mut_slice(), &v_grad);

        let snapshot = Arc::new(policy.clone());
        let stat_queries: Vec<&FactQuery> = idxs
            .iter()
            .take(cfg.batch_episodes.min(16))
            .map(|&i| &world.train[i])
            .collect();
        let stat_eps = collect_batch(
            &stat_queries,
            &fmap,
            &cloud,
            &templates,
            &snapshot,
            None,
            &collect_cfg,
            &train_labels,
            false,
            mix_seed(cfg.seed, 0x57a7, ws as u64),
            cfg.concurrency,
        );
        rows.push(step_stats(step, "warmstart", &stat_eps, bc_loss.to_f64(), v_loss.to_f64()));
        step += 1;
    }

    // RL phase: fresh rollouts each update.
    let mut stop_now = false;
    for rl in 0..cfg.steps {
        if cfg.label_refresh > 0 && rl % cfg.label_refresh == 0 {
            let snapshot = Arc::new(policy.clone());
            train_labels = super::rollout::profile_policy_labels(
                &world.train,
                &fmap,
                &cloud,
                &templates,
                &snapshot,
                &collect_cfg,
                mix_seed(cfg.seed, 0x1abe1, rl as u64),
                cfg.concurrency,
            );
        }
        let idxs = cycler.next_batch(cfg.batch_episodes);
        let queries: Vec<&FactQuery> = idxs.iter().map(|&i| &world.train[i]).collect();
        let snapshot = Arc::new(policy.clone());
        let value_snapshot = Arc::new(vm.clone());
        let mut eps = collect_batch(
            &queries,
            &fmap,
            &cloud,
            &templates,
            &snapshot,
            Some(&value_snapshot),
            &collect_cfg,
            &train_labels,
            false,
            mix_seed(cfg.seed, 0x5e11, rl as u64),
            cfg.concurrency,
        );
        let batch = batch_from(&mut eps);

        let (v_loss, v_grad) = value_loss(vm, &batch)?;
        value_opt.step(vm.phi.as_mut_slice(), &v_grad);

        let (p_loss, p_grad) = vapo_loss(policy, &batch, &cfg.clip)?;
        let mut params = std::mem::take(&mut policy.theta);
        policy_opt.step(&mut params, &p_grad);
        policy.theta = params;

        rows.push(step_stats(step, "rl", &eps, p_loss.to_f64(), v_loss.to_f64()));
        step += 1;

        let due = cfg.eval_every > 0 && (rl + 1) % cfg.eval_every == 0;
        if due || rl + 1 == cfg.steps {
            let summary = run_eval(policy, step);
            if let Some(rule) = &cfg.stop {
                let quality_ok = summary.quality >= rule.quality;
                let inscore_ok = summary.in_score.map(|s| s >= rule.in_score).unwrap_or(false);
                let easy_ok = summary
                    .easy_request_rate
                    .map(|r| r <= rule.easy_request_rate)
                    .unwrap_or(false);
                if step >= rule.min_steps && quality_ok && inscore_ok && easy_ok {
                    stop_now = true;
                }
            }
            evals.push(EvalPoint { step, summary });
            if stop_now {
                break;
            }
        }
    }

    let final_eval = match evals.last() {
        Some(point) if point.step == step => point.summary.clone(),
        _ => {
            let summary = run_eval(policy, step);
            evals.push(EvalPoint { step, summary: summary.clone() });
            summary
        }
    };

    Ok(TrainingReport { rows, evals, final_eval, steps_run: step })
}
