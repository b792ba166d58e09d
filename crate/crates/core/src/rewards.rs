//! The five episode reward components and their combination
//! `R = r_format + r_quality + r_feedback + α·r_privacy + β·r_efficiency`,
//! plus per-token reward placement for the trainer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{JudgeError, PrivacyJudge, Verdict};
use crate::num::Scalar;
use crate::textnorm::normalize;
use crate::trajectory::{SegmentKind, TokenizedTrajectory, TrajectoryOutcome};

/// Constraint weights: α scales the privacy penalty, β the efficiency
/// penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct RewardWeights<S: Scalar> {
    pub alpha: S,
    pub beta: S,
}

impl<S: Scalar> Default for RewardWeights<S> {
    /// Defaults sit at the knee points observed in the ablations: privacy
    /// saturates past 0.3 and β trades turns for answer quality.
    fn default() -> Self {
        RewardWeights { alpha: S::from_f64(0.3), beta: S::from_f64(0.2) }
    }
}

/// Unweighted reward components for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct RewardComponents<S: Scalar> {
    /// −1 on a malformed or truncated trajectory, else 0.
    pub r_format: S,
    /// Exact-match correctness, 0 or 1.
    pub r_quality: S,
    /// −1 if any cloud reply asked for context, else 0.
    pub r_feedback: S,
    /// −1 if the judged requests leaked a privacy item, else 0.
    pub r_privacy: S,
    /// Difficulty-aware turn penalty in [−1, 0].
    pub r_efficiency: S,
}

impl<S: Scalar> RewardComponents<S> {
    pub fn zeros() -> Self {
        RewardComponents {
            r_format: S::zero(),
            r_quality: S::zero(),
            r_feedback: S::zero(),
            r_privacy: S::zero(),
            r_efficiency: S::zero(),
        }
    }
}

/// Components plus weights and the combined total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct RewardBreakdown<S: Scalar> {
    #[serde(flatten)]
    pub components: RewardComponents<S>,
    pub alpha: S,
    pub beta: S,
    pub total: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("request count exceeds the turn limit (n_r {n_r} > n_max {n_max})")]
    TurnsOutOfRange { n_r: usize, n_max: usize },
}

/// Exact-match quality reward: 1 iff the normalized prediction equals any
/// normalized gold answer.
pub fn quality_reward<S: Scalar>(pred: &str, golds: &[String]) -> S {
    debug_assert!(!golds.is_empty(), "gold answers must be non-empty");
    let p = normalize(pred);
    if golds.iter().any(|g| normalize(g) == p) {
        S::one()
    } else {
        S::zero()
    }
}

/// Difficulty-aware efficiency penalty:
/// `-I(hard)·n_r/n_max - I(easy ∧ n_r>0)`.
pub fn efficiency_penalty<S: Scalar>(is_easy: bool, n_r: usize, n_max: usize) -> Result<S, DomainError> {
    debug_assert!(n_max >= 1);
    if n_r > n_max {
        return Err(DomainError::TurnsOutOfRange { n_r, n_max });
    }
    if is_easy {
        Ok(if n_r > 0 { -S::one() } else { S::zero() })
    } else {
        Ok(-(S::from_usize(n_r) / S::from_usize(n_max)))
    }
}

/// −1 iff the cloud asked for context at least once during the episode.
pub fn feedback_penalty<S: Scalar>(need_count: usize) -> S {
    if need_count > 0 {
        -S::one()
    } else {
        S::zero()
    }
}

/// −1 iff the judge reports leakage for the episode's requests against the
/// privacy set `P`. No requests means nothing was uploaded.
pub fn privacy_penalty<S: Scalar>(
    requests: &[String],
    privacy_items: &[String],
    judge: &dyn PrivacyJudge,
) -> Result<S, JudgeError> {
    if requests.is_empty() {
        return Ok(S::zero());
    }
    match judge.judge(requests, privacy_items)? {
        Verdict::Leak => Ok(-S::one()),
        Verdict::NoLeak => Ok(S::zero()),
    }
}

/// −1 on a format violation or truncated episode, else 0.
pub fn format_reward<S: Scalar>(outcome: &TrajectoryOutcome) -> S {
    match outcome {
        TrajectoryOutcome::Complete(_) => S::zero(),
        TrajectoryOutcome::Incomplete { .. } => -S::one(),
    }
}

/// Combine components into the episode total. Pure arithmetic, no rounding.
pub fn combine<S: Scalar>(components: RewardComponents<S>, w: RewardWeights<S>) -> RewardBreakdown<S> {
    let c = &components;
    debug_assert!(c.r_format == S::zero() || c.r_format == -S::one());
    debug_assert!(c.r_quality == S::zero() || c.r_quality == S::one());
    debug_assert!(c.r_feedback == S::zero() || c.r_feedback == -S::one());
    debug_assert!(c.r_privacy == S::zero() || c.r_privacy == -S::one());
    debug_assert!(c.r_efficiency <= S::zero() && c.r_efficiency >= -S::one());
    let total = c.r_format + c.r_quality + c.r_feedback + w.alpha * c.r_privacy + w.beta * c.r_efficiency;
    RewardBreakdown { components, alpha: w.alpha, beta: w.beta, total }
}

/// Where the scalar episode reward lands on the token stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementMode {
    /// Everything on the last locally-emitted token.
    TerminalOnly,
    /// The feedback penalty lands on the closing token of the first message
    /// whose reply asked for context; the remainder stays terminal.
    ProcessPlaced,
}

/// Spread the episode reward over tokens. Rewards land on masked (locally
/// emitted) tokens only and always sum to `rb.total` exactly.
pub fn place_per_token_rewards<S: Scalar>(
    tt: &TokenizedTrajectory,
    rb: &RewardBreakdown<S>,
    mode: PlacementMode,
    first_need_message: Option<usize>,
) -> Vec<S> {
    let mut rewards = vec![S::zero(); tt.tokens.len()];
    let masked = tt.masked_positions();
    let Some(&last) = masked.last() else {
        return rewards;
    };
    match mode {
        PlacementMode::TerminalOnly => {
            rewards[last] = rb.total;
        }
        PlacementMode::ProcessPlaced => {
            let feedback = rb.components.r_feedback;
            let split = if feedback < S::zero() {
                first_need_message.and_then(|ordinal| {
                    tt.segment_spans
                        .iter()
                        .filter(|(k, _, _)| *k == SegmentKind::Message)
                        .nth(ordinal)
                        .map(|&(_, _, end)| end - 1)
                })
            } else {
                None
            };
            match split {
                Some(close_idx) => {
                    rewards[close_idx] = feedback;
                    rewards[last] = rewards[last] + (rb.total - feedback);
                }
                None => rewards[last] = rb.total,
            }
        }
    }
    rewards
}

/// Score a finished episode against its query: all five components plus the
/// combined total.
pub fn score_episode(
    record: &crate::orchestrator::EpisodeRecord,
    query: &crate::data::Query,
    is_easy: bool,
    n_max: usize,
    judge: &dyn PrivacyJudge,
    weights: RewardWeights<f64>,
) -> Result<RewardBreakdown<f64>, JudgeError> {
    let components = RewardComponents {
        r_format: format_reward(&record.outcome()),
        r_quality: record
            .predicted_answer
            .as_deref()
            .filter(|_| !query.answers.is_empty())
            .map(|p| quality_reward(p, &query.answers))
            .unwrap_or(0.0),
        r_feedback: feedback_penalty(record.need_count),
        r_privacy: privacy_penalty(&record.requests, &query.privacy_items, judge)?,
        r_efficiency: efficiency_penalty(is_easy, record.n_requests.min(n_max), n_max.max(1))
            .unwrap_or(-1.0),
    };
    Ok(combine(components, weights))
}
