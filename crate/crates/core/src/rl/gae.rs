//! Generalized advantage estimation over the masked token subsequence.
//!
//! Injected observation tokens are not policy decisions, so the time axis
//! for the TD recursion is the subsequence of mask=1 positions; rewards and
//! values stored at mask=0 positions are ignored entirely, and the outputs
//! are zero there. The length-adaptive mode sets `λ = 1 − 1/(α·L)` with `L`
//! the number of masked tokens, clamped to `[0, 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", bound(serialize = "", deserialize = ""))]
pub enum LambdaMode<S: Scalar> {
    Fixed(S),
    LengthAdaptive { alpha_len: S },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct GaeConfig<S: Scalar> {
    pub gamma: S,
    pub lambda_mode: LambdaMode<S>,
    pub value_lambda: S,
}

impl<S: Scalar> Default for GaeConfig<S> {
    fn default() -> Self {
        GaeConfig {
            gamma: S::one(),
            lambda_mode: LambdaMode::LengthAdaptive { alpha_len: S::from_f64(0.05) },
            value_lambda: S::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("gamma must lie in (0, 1]")]
    BadGamma,
    #[error("lambda must lie in [0, 1]")]
    BadLambda,
    #[error("alpha_len must be positive")]
    BadAlphaLen,
    #[error("rewards, values, and mask must have equal lengths")]
    LengthMismatch,
}

impl<S: Scalar> GaeConfig<S> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > S::zero() && self.gamma <= S::one()) {
            return Err(ConfigError::BadGamma);
        }
        match self.lambda_mode {
            LambdaMode::Fixed(l) => {
                if !(l >= S::zero() && l <= S::one()) {
                    return Err(ConfigError::BadLambda);
                }
            }
            LambdaMode::LengthAdaptive { alpha_len } => {
                if alpha_len <= S::zero() {
                    return Err(ConfigError::BadAlphaLen);
                }
            }
        }
        if !(self.value_lambda >= S::zero() && self.value_lambda <= S::one()) {
            return Err(ConfigError::BadLambda);
        }
        Ok(())
    }

    /// The λ used for a trajectory with `masked_len` policy tokens.
    pub fn lambda_for(&self, masked_len: usize) -> S {
        match self.lambda_mode {
            LambdaMode::Fixed(l) => l,
            LambdaMode::LengthAdaptive { alpha_len } => {
                let l = S::from_usize(masked_len.max(1));
                let lam = S::one() - S::one() / (alpha_len * l);
                // α·L ≤ 1 would go negative: clamp to one-step TD.
                if lam < S::zero() {
                    S::zero()
                } else {
                    lam
                }
            }
        }
    }
}

/// Single-λ GAE pass: `δ_k = r_k + γ·V_{k+1} − V_k` over masked positions
/// with terminal bootstrap `V = 0`, `Â_k = Σ_l (γλ)^l δ_{k+l}`, and
/// `returns_k = Â_k + V_k`. Outputs are full-length, zero at mask=0.
pub fn compute_gae_lambda<S: Scalar>(
    rewards: &[S],
    values: &[S],
    mask: &[u8],
    gamma: S,
    lambda: S,
) -> Result<(Vec<S>, Vec<S>), ConfigError> {
    if rewards.len() != values.len() || rewards.len() != mask.len() {
        return Err(ConfigError::LengthMismatch);
    }
    let idx: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter_map(|(i, &m)| (m == 1).then_some(i))
        .collect();
    let mut advantages = vec![S::zero(); rewards.len()];
    let mut returns = vec![S::zero(); rewards.len()];
    let mut acc = S::zero();
    for k in (0..idx.len()).rev() {
        let i = idx[k];
        let next_v = if k + 1 < idx.len() { values[idx[k + 1]] } else { S::zero() };
        let delta = rewards[i] + gamma * next_v - values[i];
        acc = delta + gamma * lambda * acc;
        advantages[i] = acc;
        returns[i] = acc + values[i];
    }
    Ok((advantages, returns))
}

/// GAE with the configured policy λ (length-adaptive or fixed).
pub fn compute_gae<S: Scalar>(
    rewards: &[S],
    values: &[S],
    mask: &[u8],
    cfg: &GaeConfig<S>,
) -> Result<(Vec<S>, Vec<S>), ConfigError> {
    cfg.validate()?;
    let masked_len = mask.iter().filter(|&&m| m == 1).count();
    compute_gae_lambda(rewards, values, mask, cfg.gamma, cfg.lambda_for(masked_len))
}

/// Value-model regression targets: the same recursion at `value_lambda`.
pub fn value_targets<S: Scalar>(
    rewards: &[S],
    values: &[S],
    mask: &[u8],
    cfg: &GaeConfig<S>,
) -> Result<Vec<S>, ConfigError> {
    cfg.validate()?;
    let (_, returns) = compute_gae_lambda(rewards, values, mask, cfg.gamma, cfg.value_lambda)?;
    Ok(returns)
}
