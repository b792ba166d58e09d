//! The clipped, masked surrogate objective and the value regression loss.
//!
//! Per trajectory the policy loss is
//! `-(1/Σ mask) Σ_{mask=1} min(p_t·Â_t, clip(p_t, 1-ε_low, 1+ε_high)·Â_t)`
//! with `p_t` the probability ratio against the rollout snapshot; the batch
//! loss is the mean over trajectories. Only masked (locally emitted) tokens
//! ever enter the sums, so anything stored at observation positions is
//! inert by construction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::TokenPolicy;
use super::value::LinearValue;
use super::StepContext;
use crate::num::Scalar;
use crate::trajectory::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ClipConfig<S: Scalar> {
    pub eps_low: S,
    pub eps_high: S,
}

impl<S: Scalar> Default for ClipConfig<S> {
    fn default() -> Self {
        ClipConfig { eps_low: S::from_f64(0.2), eps_high: S::from_f64(0.28) }
    }
}

impl<S: Scalar> ClipConfig<S> {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.eps_low <= S::zero() || self.eps_high <= S::zero() || self.eps_low > S::one() {
            return Err(TrainError::BadClip);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("clip ranges must be positive with eps_low ≤ 1")]
    BadClip,
    #[error("loss or gradient diverged (non-finite)")]
    Diverged,
    #[error("rollout trajectory arrays are inconsistent: {0}")]
    BadBatch(String),
}

/// One recorded policy decision: the sampling context, the emitted token,
/// and its log-probability under the snapshot that generated it.
#[derive(Debug, Clone)]
pub struct RolloutStep<S: Scalar> {
    pub ctx: StepContext<S>,
    pub token: TokenId,
    pub old_log_prob: S,
}

/// One trajectory of a rollout batch. Vectors are full token length and
/// aligned with `mask`; `steps` holds one entry per mask=1 position, in
/// order.
#[derive(Debug, Clone)]
pub struct RolloutTraj<S: Scalar> {
    pub tokens: Vec<TokenId>,
    pub mask: Vec<u8>,
    pub steps: Vec<RolloutStep<S>>,
    pub old_log_probs: Vec<S>,
    pub values: Vec<S>,
    pub rewards: Vec<S>,
    pub advantages: Vec<S>,
    /// Value regression targets (returns at the value λ).
    pub returns: Vec<S>,
}

impl<S: Scalar> RolloutTraj<S> {
    pub fn masked_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| (m == 1).then_some(i))
            .collect()
    }

    fn check(&self) -> Result<Vec<usize>, TrainError> {
        let n = self.tokens.len();
        for (name, len) in [
            ("mask", self.mask.len()),
            ("old_log_probs", self.old_log_probs.len()),
            ("values", self.values.len()),
            ("rewards", self.rewards.len()),
            ("advantages", self.advantages.len()),
            ("returns", self.returns.len()),
        ] {
            if len != n {
                return Err(TrainError::BadBatch(format!("{name} length {len} != tokens {n}")));
            }
        }
        let masked = self.masked_positions();
        if masked.len() != self.steps.len() {
            return Err(TrainError::BadBatch(format!(
                "{} steps for {} masked tokens",
                self.steps.len(),
                masked.len()
            )));
        }
        if masked.is_empty() {
            return Err(TrainError::BadBatch("trajectory has no masked tokens".into()));
        }
        Ok(masked)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch<S: Scalar> {
    pub trajectories: Vec<RolloutTraj<S>>,
}

/// Clipped-surrogate loss and its exact gradient over θ. Maximizing the
/// objective means descending this loss.
pub fn vapo_loss<S: Scalar>(
    policy: &TokenPolicy<S>,
    batch: &RolloutBatch<S>,
    clip: &ClipConfig<S>,
) -> Result<(S, Vec<S>), TrainError> {
    clip.validate()?;
    if batch.trajectories.is_empty() {
        return Ok((S::zero(), vec![S::zero(); policy.param_len()]));
    }
    let lo = S::one() - clip.eps_low;
    let hi = S::one() + clip.eps_high;
    let batch_n = S::from_usize(batch.trajectories.len());
    let mut loss = S::zero();
    let mut grad = vec![S::zero(); policy.param_len()];

    for traj in &batch.trajectories {
        let masked = traj.check()?;
        let inv_len = S::one() / S::from_usize(masked.len());
        for (step, &pos) in traj.steps.iter().zip(&masked) {
            let adv = traj.advantages[pos];
            let new_lp = policy.log_prob(&step.ctx, step.token);
            let ratio = (new_lp - step.old_log_prob).exp();
            let clipped_ratio = if ratio < lo {
                lo
            } else if ratio > hi {
                hi
            } else {
                ratio
            };
            let unclipped = ratio * adv;
            let clipped = clipped_ratio * adv;
            let term = if unclipped <= clipped { unclipped } else { clipped };
            loss = loss - inv_len * term / batch_n;
            // The min picks the unclipped branch exactly when gradient may
            // flow; the saturated clip branch is constant in θ.
            if unclipped <= clipped {
                let coeff = -inv_len * ratio * adv / batch_n;
                policy.accum_grad_log_prob(&step.ctx, step.token, coeff, &mut grad);
            }
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::Diverged);
    }
    Ok((loss, grad))
}

/// Mean squared error of the value model against the stored targets over all
/// masked tokens in the batch, with its exact gradient over φ.
pub fn value_loss<S: Scalar>(
    vm: &LinearValue<S>,
    batch: &RolloutBatch<S>,
) -> Result<(S, Vec<S>), TrainError> {
    let mut grad = vec![S::zero(); vm.param_len()];
    let mut total = S::zero();
    let mut count = 0usize;
    for traj in &batch.trajectories {
        let masked = traj.check()?;
        count += masked.len();
    }
    if count == 0 {
        return Ok((S::zero(), grad));
    }
    let inv_n = S::one() / S::from_usize(count);
    for traj in &batch.trajectories {
        let masked = traj.masked_positions();
        for (step, &pos) in traj.steps.iter().zip(&masked) {
            let target = traj.returns[pos];
            let v = vm.value(&step.ctx.features);
            let err = v - target;
            total = total + err * err * inv_n;
            vm.accum_grad(&step.ctx.features, S::from_f64(2.0) * err * inv_n, &mut grad);
        }
    }
    if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(TrainError::Diverged);
    }
    Ok((total, grad))
}
