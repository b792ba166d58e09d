//! Rollout collection for FactWorld: a grammar-constrained token sampler
//! wrapped as a local agent, driven either by a token policy or by the
//! scripted expert, plus reward attribution and advantage estimation for
//! the collected trajectories.

use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::factworld::{FactQuery, KnowKind, QueryView, ToyVocab};
use super::gae::{compute_gae, value_targets, GaeConfig};
use super::loss::{RolloutStep, RolloutTraj};
use super::policy::TokenPolicy;
use super::value::LinearValue;
use super::{Features, StepContext};
use crate::agents::{Agent, AgentError, ChatMessage, GenerationParams, PromptTemplates};
use crate::metrics::{judge_leak, RuleBasedJudge, Verdict};
use crate::num::Scalar;
use crate::orchestrator::{run_episode, EpisodeConfig, EpisodeRecord};
use crate::rewards::{
    combine, efficiency_penalty, feedback_penalty, format_reward, place_per_token_rewards,
    quality_reward, PlacementMode, RewardBreakdown, RewardComponents, RewardWeights,
};
use crate::trajectory::{tokenize_with_mask, SegmentKind, TokenId, TrajectoryOutcome};

/// Generation caps per segment kind.
#[derive(Debug, Clone, Copy)]
pub struct SamplerCfg {
    pub think_cap: usize,
    pub msg_cap: usize,
    pub ans_cap: usize,
}

impl Default for SamplerCfg {
    fn default() -> Self {
        SamplerCfg { think_cap: 2, msg_cap: 6, ans_cap: 2 }
    }
}

/// Featurizer state at one token decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenState {
    Think,
    Branch,
    Message,
    Answer,
}

const N_STATES: usize = 4;
const MAX_POS: usize = 8;
const N_FLAGS: usize = 7;

/// Sparse featurization of the visible episode state. Copy-source blocks are
/// aligned with the output position: in the message state the ask region and
/// the (shifted) privacy region, in the answer state the reply payload and
/// the context-region object as separate blocks: answering from local
/// context and answering from a reply are distinct skills the policy
/// practices separately.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    vocab: Arc<ToyVocab>,
    pub dim: usize,
}

struct StepInfo<'a> {
    state: GenState,
    pos: usize,
    prev: TokenId,
    view: &'a QueryView,
    reply: Option<&'a [TokenId]>,
    reply_need: bool,
    n_r: usize,
    n_max: usize,
    can_message: bool,
}

impl FeatureMap {
    pub fn new(vocab: Arc<ToyVocab>) -> Self {
        let v = vocab.len();
        FeatureMap { vocab, dim: N_STATES + MAX_POS + 5 * v + N_FLAGS }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn evidence(&self, view: &QueryView, reply: Option<&[TokenId]>, reply_need: bool) -> Vec<TokenId> {
        match reply {
            Some(payload) if !reply_need && !payload.is_empty() => payload.to_vec(),
            _ => view.know_object().map(|o| o.to_vec()).unwrap_or_default(),
        }
    }

    fn features<S: Scalar>(&self, info: &StepInfo<'_>) -> Features<S> {
        let v = self.vocab.len();
        let pad = self.vocab.pad;
        let mut f = Features::new(self.dim);
        let state_idx = match info.state {
            GenState::Think => 0,
            GenState::Branch => 1,
            GenState::Message => 2,
            GenState::Answer => 3,
        };
        f.push(state_idx, S::one());
        f.push(N_STATES + info.pos.min(MAX_POS - 1), S::one());
        let base = N_STATES + MAX_POS;
        f.push(base + info.prev, S::one());
        if info.state == GenState::Message {
            let ask = info.view.ask.get(info.pos).copied().unwrap_or(pad);
            let privacy = if info.pos >= 1 {
                info.view.privacy.get(info.pos - 1).copied().unwrap_or(pad)
            } else {
                pad
            };
            f.push(base + v + ask, S::one());
            f.push(base + 2 * v + privacy, S::one());
        }
        if info.state == GenState::Answer {
            // Exactly one evidence source per answer: a useful reply wins,
            // otherwise the context region. Answering from local context is
            // its own skill, practiced only on solo episodes.
            let (reply_tok, know_tok) = match info.reply {
                Some(payload) if !info.reply_need => {
                    (payload.get(info.pos).copied().unwrap_or(pad), pad)
                }
                _ => (
                    pad,
                    info.view
                        .know_object()
                        .and_then(|o| o.get(info.pos).copied())
                        .unwrap_or(pad),
                ),
            };
            f.push(base + 3 * v + reply_tok, S::one());
            f.push(base + 4 * v + know_tok, S::one());
        }
        let flags = base + 5 * v;
        let flag = |b: bool| if b { S::one() } else { S::zero() };
        f.push(flags, flag(info.view.has_know));
        f.push(flags + 1, flag(info.view.has_privacy));
        f.push(flags + 2, flag(info.reply.is_some()));
        f.push(flags + 3, flag(info.reply_need));
        f.push(flags + 4, S::from_usize(info.n_r) / S::from_usize(info.n_max.max(1)));
        f.push(flags + 5, flag(info.can_message));
        f.push(flags + 6, S::one());
        f
    }
}

/// What drives token choices during a rollout.
pub enum Driver<S: Scalar> {
    Policy { policy: Arc<TokenPolicy<S>>, temperature: S, greedy: bool },
    /// Scripted expert; on structurally easy queries it answers solo with
    /// the given probability, otherwise it requests. With probability
    /// `flub_prob` a demonstration sends an underspecified first request,
    /// receives a context request, and retries properly, teaching the
    /// recovery path. With probability `clean_prob` a privacy-query request
    /// uses the reformulated phrasing (no alias) instead of the lazy copy.
    Expert { solo_prob: f64, flub_prob: f64, clean_prob: f64 },
}

pub struct StepRecord<S: Scalar> {
    pub ctx: StepContext<S>,
    pub token: TokenId,
    pub log_prob: S,
    pub value: S,
}

struct Inner<S: Scalar> {
    rng: ChaCha8Rng,
    tape: Vec<StepRecord<S>>,
    expert_solo: Option<bool>,
    expert_flub: Option<bool>,
    expert_clean: Option<bool>,
}

/// Local agent that samples trajectory tokens under the grammar and records
/// every decision for the trainer.
pub struct PolicyAgent<S: Scalar> {
    fmap: Arc<FeatureMap>,
    sampler: SamplerCfg,
    n_max: usize,
    pub solo: bool,
    driver: Driver<S>,
    value: Option<Arc<LinearValue<S>>>,
    inner: Mutex<Inner<S>>,
}

fn extract_last_reply(partial: &str) -> Option<&str> {
    let start = partial.rfind("<agent-reply>")? + "<agent-reply>".len();
    let end = partial[start..].find("</agent-reply>")? + start;
    Some(&partial[start..end])
}

impl<S: Scalar> PolicyAgent<S> {
    pub fn new(
        fmap: Arc<FeatureMap>,
        sampler: SamplerCfg,
        n_max: usize,
        driver: Driver<S>,
        value: Option<Arc<LinearValue<S>>>,
        seed: u64,
    ) -> Self {
        PolicyAgent {
            fmap,
            sampler,
            n_max,
            solo: false,
            driver,
            value,
            inner: Mutex::new(Inner {
                rng: ChaCha8Rng::seed_from_u64(seed),
                tape: Vec::new(),
                expert_solo: None,
                expert_flub: None,
                expert_clean: None,
            }),
        }
    }

    pub fn with_solo(mut self, solo: bool) -> Self {
        self.solo = solo;
        self
    }

    pub fn take_tape(&self) -> Vec<StepRecord<S>> {
        std::mem::take(&mut self.inner.lock().unwrap().tape)
    }

    fn vocab(&self) -> &ToyVocab {
        &self.fmap.vocab
    }

    fn content_tokens(&self) -> Vec<TokenId> {
        (8..self.vocab().len()).collect()
    }

    fn choose(
        &self,
        inner: &mut Inner<S>,
        info: &StepInfo<'_>,
        legal: Vec<TokenId>,
        expert_plan: &mut Option<Vec<TokenId>>,
    ) -> TokenId {
        let features = self.fmap.features::<S>(info);
        let ctx = StepContext { prev_token: info.prev, features, legal };
        let (token, log_prob) = if ctx.legal.len() == 1 {
            (ctx.legal[0], S::zero())
        } else {
            match &self.driver {
                Driver::Policy { policy, temperature, greedy } => {
                    if *greedy {
                        let tok = policy.greedy(&ctx);
                        (tok, policy.log_prob(&ctx, tok))
                    } else {
                        policy.sample(&ctx, *temperature, &mut inner.rng)
                    }
                }
                Driver::Expert { .. } => {
                    let tok = self.expert_choice(inner, info, &ctx, expert_plan);
                    (tok, S::zero())
                }
            }
        };
        let value = self
            .value
            .as_ref()
            .map(|vm| vm.value(&ctx.features))
            .unwrap_or_else(S::zero);
        inner.tape.push(StepRecord { ctx, token, log_prob, value });
        token
    }

    /// What the context region shows relative to the question: the
    /// answer-bearing fact, the first hop only, or nothing. A first-hop fact
    /// restates the question's relation and subject; anything else visible
    /// must carry the answer. When the two readings coincide (same relation,
    /// subject a self-loop) they also agree on the answer, so either branch
    /// is consistent.
    fn know_kind(&self, view: &QueryView) -> KnowKind {
        let v = self.vocab();
        if !view.has_know {
            return KnowKind::None;
        }
        let two_hop = view.ask[3] != v.pad;
        let subject = if view.has_privacy {
            [view.privacy[1], view.privacy[2]]
        } else {
            [view.ask[1], view.ask[2]]
        };
        if two_hop
            && view.know[0] == view.ask[0]
            && view.know[1] == subject[0]
            && view.know[2] == subject[1]
        {
            KnowKind::Intermediate
        } else {
            KnowKind::Answer
        }
    }

    fn expert_message_plan(
        &self,
        view: &QueryView,
        reply: Option<&[TokenId]>,
        n_r: usize,
        reply_need: bool,
        clean: bool,
    ) -> Vec<TokenId> {
        if reply_need {
            // Retry after a context request: re-issue the proper first plan.
            return self.expert_message_plan(view, None, 0, false, clean);
        }
        let v = self.vocab();
        let two_hop = view.ask[3] != v.pad;
        match self.know_kind(view) {
            KnowKind::Intermediate => {
                // Second hop about the visible intermediate entity.
                vec![view.ask[3], view.know[3], view.know[4]]
            }
            KnowKind::None if two_hop && n_r >= 1 => match reply {
                // Second hop about the entity the cloud just returned.
                Some(payload) if payload.len() >= 2 => {
                    vec![view.ask[3], payload[0], payload[1]]
                }
                _ => vec![view.ask[3]],
            },
            _ => {
                // Lazy forwarding: question span plus the alias binding when
                // present. On privacy queries this resolves and leaks; the
                // clean phrasing drops the user-linking alias.
                if view.has_privacy {
                    let alias_slot = if clean { v.pad } else { view.privacy[0] };
                    vec![view.ask[0], alias_slot, view.privacy[1], view.privacy[2]]
                } else {
                    let mut plan = vec![view.ask[0], view.ask[1], view.ask[2]];
                    if two_hop {
                        plan.push(view.ask[3]);
                    }
                    plan
                }
            }
        }
    }

    fn expert_choice(
        &self,
        inner: &mut Inner<S>,
        info: &StepInfo<'_>,
        ctx: &StepContext<S>,
        plan: &mut Option<Vec<TokenId>>,
    ) -> TokenId {
        let v = self.vocab();
        let close = |kind: SegmentKind| v.vocab.tag_id(kind, true);
        match info.state {
            GenState::Think => close(SegmentKind::Think),
            GenState::Branch => {
                let (solo_prob, flub_prob, clean_prob) = match &self.driver {
                    Driver::Expert { solo_prob, flub_prob, clean_prob } => {
                        (*solo_prob, *flub_prob, *clean_prob)
                    }
                    _ => unreachable!(),
                };
                let solo = *inner.expert_solo.get_or_insert_with(|| {
                    use rand::Rng;
                    inner.rng.gen::<f64>() < solo_prob
                });
                let two_hop = info.view.ask[3] != v.pad;
                let flub = *inner.expert_flub.get_or_insert_with(|| {
                    use rand::Rng;
                    inner.rng.gen::<f64>() < flub_prob
                }) && !two_hop;
                let clean = *inner.expert_clean.get_or_insert_with(|| {
                    use rand::Rng;
                    inner.rng.gen::<f64>() < clean_prob
                });
                let have_info = info.reply.is_some() && !info.reply_need;
                let answer_now = if have_info {
                    // From scratch, a 2-hop chain needs a second request.
                    !(two_hop && self.know_kind(info.view) == KnowKind::None && info.n_r < 2)
                } else if info.reply_need {
                    // A context request means the last message failed: retry.
                    false
                } else {
                    self.know_kind(info.view) == KnowKind::Answer && solo
                };
                if answer_now || !info.can_message {
                    ctx.legal
                        .iter()
                        .copied()
                        .find(|&t| t == v.vocab.tag_id(SegmentKind::Answer, false))
                        .unwrap_or(ctx.legal[0])
                } else {
                    *plan = Some(if flub && info.n_r == 0 {
                        // Underspecified request: relation without an entity.
                        vec![info.view.ask[0]]
                    } else {
                        self.expert_message_plan(
                            info.view,
                            info.reply,
                            info.n_r,
                            info.reply_need,
                            clean,
                        )
                    });
                    v.vocab.tag_id(SegmentKind::Message, false)
                }
            }
            GenState::Message => {
                let tokens = plan.clone().unwrap_or_default();
                match tokens.get(info.pos) {
                    Some(&t) if ctx.legal.contains(&t) => t,
                    _ => close(SegmentKind::Message),
                }
            }
            GenState::Answer => {
                let evidence = self.fmap.evidence(info.view, info.reply, info.reply_need);
                match evidence.get(info.pos) {
                    Some(&t) if ctx.legal.contains(&t) => t,
                    _ => close(SegmentKind::Answer),
                }
            }
        }
    }
}

impl<S: Scalar> Agent for PolicyAgent<S> {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        let v = self.vocab();
        let question = crate::agents::prompts::extract_question(messages)
            .ok_or_else(|| AgentError::InvalidRequest("prompt lacks a question".into()))?;
        let view = QueryView::parse(question, v)
            .ok_or_else(|| AgentError::InvalidRequest("question is not a FactWorld query".into()))?;
        let partial = crate::agents::prompts::partial_trajectory(messages);
        let n_r = partial.matches("</message>").count();
        let reply_text = extract_last_reply(partial);
        let reply_tokens: Option<Vec<TokenId>> = match reply_text {
            Some(text) => Some(
                v.tokenize(text)
                    .ok_or_else(|| AgentError::MalformedResponse("reply outside vocabulary".into()))?,
            ),
            None => None,
        };
        let reply_need = reply_tokens
            .as_deref()
            .map(|t| t == [v.needctx])
            .unwrap_or(false);
        let can_message = n_r < self.n_max && !self.solo;
        let prev_start = if partial.is_empty() {
            v.pad
        } else {
            v.vocab.tag_id(SegmentKind::AgentReply, true)
        };

        let mut inner = self.inner.lock().unwrap();
        let mut expert_plan: Option<Vec<TokenId>> = None;
        let mut out: Vec<TokenId> = Vec::new();
        let mut prev = prev_start;
        let content = self.content_tokens();
        let info = |state: GenState, pos: usize, prev: TokenId| StepInfo {
            state,
            pos,
            prev,
            view: &view,
            reply: reply_tokens.as_deref(),
            reply_need,
            n_r,
            n_max: self.n_max,
            can_message,
        };

        // <think> is forced at the start of every turn.
        let think_open = v.vocab.tag_id(SegmentKind::Think, false);
        let tok = self.choose(&mut inner, &info(GenState::Think, 0, prev), vec![think_open], &mut expert_plan);
        out.push(tok);
        prev = tok;

        // Think body.
        let think_close = v.vocab.tag_id(SegmentKind::Think, true);
        let mut pos = 0usize;
        loop {
            let legal = if pos >= self.sampler.think_cap {
                vec![think_close]
            } else {
                let mut l = content.clone();
                l.push(think_close);
                l
            };
            let tok = self.choose(&mut inner, &info(GenState::Think, pos, prev), legal, &mut expert_plan);
            out.push(tok);
            prev = tok;
            if tok == think_close {
                break;
            }
            pos += 1;
        }

        // Branch: request or answer.
        let msg_open = v.vocab.tag_id(SegmentKind::Message, false);
        let ans_open = v.vocab.tag_id(SegmentKind::Answer, false);
        let legal = if can_message { vec![msg_open, ans_open] } else { vec![ans_open] };
        let branch = self.choose(&mut inner, &info(GenState::Branch, 0, prev), legal, &mut expert_plan);
        out.push(branch);
        prev = branch;

        if branch == msg_open {
            let msg_close = v.vocab.tag_id(SegmentKind::Message, true);
            let mut pos = 0usize;
            loop {
                let legal = if pos >= self.sampler.msg_cap {
                    vec![msg_close]
                } else {
                    let mut l = content.clone();
                    l.push(msg_close);
                    l
                };
                let tok = self.choose(&mut inner, &info(GenState::Message, pos, prev), legal, &mut expert_plan);
                out.push(tok);
                prev = tok;
                if tok == msg_close {
                    break;
                }
                pos += 1;
            }
        } else {
            let ans_close = v.vocab.tag_id(SegmentKind::Answer, true);
            let mut pos = 0usize;
            loop {
                let legal = if pos >= self.sampler.ans_cap {
                    vec![ans_close]
                } else {
                    let mut l = content.clone();
                    l.push(ans_close);
                    l
                };
                let tok = self.choose(&mut inner, &info(GenState::Answer, pos, prev), legal, &mut expert_plan);
                out.push(tok);
                prev = tok;
                if tok == ans_close {
                    break;
                }
                pos += 1;
            }
        }
        Ok(v.vocab.detokenize(&out))
    }

    fn tag(&self) -> String {
        match &self.driver {
            Driver::Policy { policy, greedy, .. } => {
                format!("policy:{:?}{}", policy.kind, if *greedy { ":greedy" } else { "" })
            }
            Driver::Expert { solo_prob, .. } => format!("expert:{solo_prob}"),
        }
    }
}

// ---------------------------------------------------------------------------
// Episode collection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CollectCfg<S: Scalar> {
    pub n_max: usize,
    pub sampler: SamplerCfg,
    pub weights: RewardWeights<S>,
    pub gae: GaeConfig<S>,
    pub placement: PlacementMode,
    pub temperature: S,
}

pub struct CollectedEpisode<S: Scalar> {
    pub record: EpisodeRecord,
    pub breakdown: RewardBreakdown<S>,
    pub traj: Option<RolloutTraj<S>>,
    pub easy: bool,
    pub has_privacy: bool,
    pub leaked: bool,
}

/// Split a seed stream deterministically.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base ^ a.wrapping_mul(0x9e3779b97f4a7c15) ^ b.wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Run one episode with the given driver and attribute rewards, advantages,
/// and value targets to its tokens.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode<S: Scalar>(
    fq: &FactQuery,
    fmap: &Arc<FeatureMap>,
    cloud: &dyn Agent,
    templates: &PromptTemplates,
    driver: Driver<S>,
    value: Option<Arc<LinearValue<S>>>,
    cfg: &CollectCfg<S>,
    is_easy: bool,
    seed: u64,
) -> CollectedEpisode<S> {
    let agent = PolicyAgent::new(Arc::clone(fmap), cfg.sampler, cfg.n_max, driver, value, seed);
    let ep_cfg = EpisodeConfig {
        n_max: cfg.n_max,
        local_token_budget: 100_000,
        cloud_token_budget: 64,
        params: GenerationParams {
            temperature: cfg.temperature.to_f64(),
            max_tokens: 4096,
            stop: Vec::new(),
            seed: Some(seed),
        },
        force_answer_suffix: None,
    };
    let mut record = run_episode(&fq.query, &agent, cloud, &ep_cfg, templates);
    let tape = agent.take_tape();

    let outcome = record.outcome();
    let judge = RuleBasedJudge;
    let leaked = matches!(
        judge_leak(&record.requests, &fq.query.privacy_items, &judge),
        Ok(Verdict::Leak)
    );
    let components = RewardComponents {
        r_format: format_reward::<S>(&outcome),
        r_quality: record
            .predicted_answer
            .as_deref()
            .map(|p| quality_reward::<S>(p, &fq.query.answers))
            .unwrap_or_else(S::zero),
        r_feedback: feedback_penalty::<S>(record.need_count),
        r_privacy: if leaked { -S::one() } else { S::zero() },
        r_efficiency: efficiency_penalty::<S>(is_easy, record.n_requests.min(cfg.n_max), cfg.n_max)
            .unwrap_or_else(|_| -S::one()),
    };
    let breakdown = combine(components, cfg.weights);
    record.reward = Some(RewardBreakdown::<f64> {
        components: crate::rewards::RewardComponents {
            r_format: components.r_format.to_f64(),
            r_quality: components.r_quality.to_f64(),
            r_feedback: components.r_feedback.to_f64(),
            r_privacy: components.r_privacy.to_f64(),
            r_efficiency: components.r_efficiency.to_f64(),
        },
        alpha: breakdown.alpha.to_f64(),
        beta: breakdown.beta.to_f64(),
        total: breakdown.total.to_f64(),
    });

    let traj = match &outcome {
        TrajectoryOutcome::Complete(t) => {
            let tt = tokenize_with_mask(t, &fmap.vocab.vocab).expect("toy trajectory tokenizes");
            let masked = tt.masked_positions();
            assert_eq!(masked.len(), tape.len(), "tape aligns with masked tokens");
            for (step, &pos) in tape.iter().zip(&masked) {
                assert_eq!(step.token, tt.tokens[pos], "tape token matches trajectory");
            }
            let first_need = record
                .request_needed_context
                .iter()
                .position(|&need| need);
            let rewards = place_per_token_rewards(&tt, &breakdown, cfg.placement, first_need);
            let mut values = vec![S::zero(); tt.tokens.len()];
            let mut old_log_probs = vec![S::zero(); tt.tokens.len()];
            for (step, &pos) in tape.iter().zip(&masked) {
                values[pos] = step.value;
                old_log_probs[pos] = step.log_prob;
            }
            let (advantages, _) =
                compute_gae(&rewards, &values, &tt.mask, &cfg.gae).expect("valid gae config");
            let returns =
                value_targets(&rewards, &values, &tt.mask, &cfg.gae).expect("valid gae config");
            Some(RolloutTraj {
                tokens: tt.tokens,
                mask: tt.mask,
                steps: tape
                    .into_iter()
                    .map(|s| RolloutStep { ctx: s.ctx, token: s.token, old_log_prob: s.log_prob })
                    .collect(),
                old_log_probs,
                values,
                rewards,
                advantages,
                returns,
            })
        }
        TrajectoryOutcome::Incomplete { .. } => None,
    };

    CollectedEpisode {
        record,
        breakdown,
        traj,
        easy: is_easy,
        has_privacy: fq.has_privacy,
        leaked,
    }
}

/// Collect a batch in parallel; order-preserving and deterministic in
/// (seed, queries, driver parameters) regardless of the pool width.
#[allow(clippy::too_many_arguments)]
pub fn collect_batch<S: Scalar>(
    queries: &[&FactQuery],
    fmap: &Arc<FeatureMap>,
    cloud: &dyn Agent,
    templates: &PromptTemplates,
    policy: &Arc<TokenPolicy<S>>,
    value: Option<&Arc<LinearValue<S>>>,
    cfg: &CollectCfg<S>,
    labels: &std::collections::HashMap<String, bool>,
    greedy: bool,
    base_seed: u64,
    concurrency: usize,
) -> Vec<CollectedEpisode<S>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        queries
            .par_iter()
            .enumerate()
            .map(|(idx, fq)| {
                let driver = Driver::Policy {
                    policy: Arc::clone(policy),
                    temperature: cfg.temperature,
                    greedy,
                };
                let is_easy = labels.get(&fq.query.id).copied().unwrap_or(fq.easy);
                collect_episode(
                    fq,
                    fmap,
                    cloud,
                    templates,
                    driver,
                    value.map(Arc::clone),
                    cfg,
                    is_easy,
                    mix_seed(base_seed, idx as u64, 0x51ab),
                )
            })
            .collect()
    })
}

/// Difficulty labels against the current policy: run each query greedily in
/// solo mode (message emission disabled) and mark it easy iff the answer is
/// correct. This is the in-training analog of the difficulty profiler.
#[allow(clippy::too_many_arguments)]
pub fn profile_policy_labels<S: Scalar>(
    queries: &[FactQuery],
    fmap: &Arc<FeatureMap>,
    cloud: &dyn Agent,
    templates: &PromptTemplates,
    policy: &Arc<TokenPolicy<S>>,
    cfg: &CollectCfg<S>,
    base_seed: u64,
    concurrency: usize,
) -> std::collections::HashMap<String, bool> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        use rayon::prelude::*;
        queries
            .par_iter()
            .enumerate()
            .map(|(idx, fq)| {
                let agent = PolicyAgent::new(
                    Arc::clone(fmap),
                    cfg.sampler,
                    cfg.n_max,
                    Driver::Policy {
                        policy: Arc::clone(policy),
                        temperature: cfg.temperature,
                        greedy: true,
                    },
                    None,
                    mix_seed(base_seed, idx as u64, 0x5010),
                )
                .with_solo(true);
                let ep_cfg = EpisodeConfig {
                    n_max: cfg.n_max,
                    local_token_budget: 100_000,
                    cloud_token_budget: 64,
                    params: GenerationParams::default(),
                    force_answer_suffix: None,
                };
                let rec = run_episode(&fq.query, &agent, cloud, &ep_cfg, templates);
                debug_assert_eq!(rec.n_requests, 0, "solo probes never request");
                let easy = rec
                    .predicted_answer
                    .as_deref()
                    .map(|p| quality_reward::<S>(p, &fq.query.answers) == S::one())
                    .unwrap_or(false);
                (fq.query.id.clone(), easy)
            })
            .collect()
    })
}
