//! Token policies with exact log-probabilities and gradients.
//!
//! Two parameterizations share one flat parameter vector: `TabularBigram`
//! conditions on the previous token only (its gradients are trivially exact,
//! which the finite-difference suite exploits), and `TinyMlp` is a
//! one-hidden-layer network over the sparse step features. Distributions are
//! softmaxes renormalized over the grammar-legal token set of each step.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Features, StepContext};
use crate::num::Scalar;
use crate::trajectory::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    TabularBigram,
    TinyMlp,
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("token {0} out of vocabulary (size {1})")]
    OutOfVocab(TokenId, usize),
    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(String),
}

/// A differentiable distribution over the token vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct TokenPolicy<S: Scalar> {
    pub kind: PolicyKind,
    pub vocab_size: usize,
    /// Trailing raw tokens the policy conditions on directly (both kinds use
    /// the previous token; the MLP additionally sees the featurized state).
    pub context_window: usize,
    pub hidden: usize,
    pub feature_dim: usize,
    pub theta: Vec<S>,
}

impl<S: Scalar> TokenPolicy<S> {
    /// Uniform-initialized bigram table (all logits zero).
    pub fn tabular_bigram(vocab_size: usize) -> Self {
        TokenPolicy {
            kind: PolicyKind::TabularBigram,
            vocab_size,
            context_window: 1,
            hidden: 0,
            feature_dim: 0,
            theta: vec![S::zero(); vocab_size * vocab_size],
        }
    }

    /// One-hidden-layer MLP over the step features.
    pub fn tiny_mlp(vocab_size: usize, feature_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let len = feature_dim * hidden + hidden + hidden * vocab_size + vocab_size;
        let scale = 0.1;
        let theta = (0..len)
            .map(|i| {
                // Biases start at zero.
                let in_b1 = i >= feature_dim * hidden && i < feature_dim * hidden + hidden;
                let in_b2 = i >= len - vocab_size;
                if in_b1 || in_b2 {
                    S::zero()
                } else {
                    S::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * scale)
                }
            })
            .collect();
        TokenPolicy {
            kind: PolicyKind::TinyMlp,
            vocab_size,
            context_window: 1,
            hidden,
            feature_dim,
            theta,
        }
    }

    pub fn param_len(&self) -> usize {
        self.theta.len()
    }

    fn w1(&self, feat: usize, h: usize) -> S {
        self.theta[feat * self.hidden + h]
    }

    fn b1_off(&self) -> usize {
        self.feature_dim * self.hidden
    }

    fn w2_off(&self) -> usize {
        self.b1_off() + self.hidden
    }

    fn b2_off(&self) -> usize {
        self.w2_off() + self.hidden * self.vocab_size
    }

    fn hidden_act(&self, features: &Features<S>) -> Vec<S> {
        let mut pre = vec![S::zero(); self.hidden];
        for &(i, v) in &features.active {
            for (h, p) in pre.iter_mut().enumerate() {
                *p = *p + self.w1(i, h) * v;
            }
        }
        let b1 = self.b1_off();
        for (h, p) in pre.iter_mut().enumerate() {
            *p = (*p + self.theta[b1 + h]).tanh();
        }
        pre
    }

    /// Raw logits over the full vocabulary.
    pub fn logits(&self, ctx: &StepContext<S>) -> Vec<S> {
        match self.kind {
            PolicyKind::TabularBigram => {
                let row = ctx.prev_token * self.vocab_size;
                self.theta[row..row + self.vocab_size].to_vec()
            }
            PolicyKind::TinyMlp => {
                let h = self.hidden_act(&ctx.features);
                let w2 = self.w2_off();
                let b2 = self.b2_off();
                (0..self.vocab_size)
                    .map(|tok| {
                        let mut z = self.theta[b2 + tok];
                        for (j, hv) in h.iter().enumerate() {
                            z = z + self.theta[w2 + j * self.vocab_size + tok] * *hv;
                        }
                        z
                    })
                    .collect()
            }
        }
    }

    /// Log-probabilities over `ctx.legal`, aligned with it. Temperature
    /// scales the logits before the softmax.
    pub fn legal_log_probs(&self, ctx: &StepContext<S>, temperature: S) -> Vec<S> {
        debug_assert!(!ctx.legal.is_empty());
        let logits = self.logits(ctx);
        let t = if temperature <= S::zero() { S::one() } else { temperature };
        let scaled: Vec<S> = ctx.legal.iter().map(|&tok| logits[tok] / t).collect();
        let max = scaled.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max
            + scaled
                .iter()
                .map(|&z| (z - max).exp())
                .sum::<S>()
                .ln();
        scaled.into_iter().map(|z| z - lse).collect()
    }

    /// `log π(token | ctx)` under the legal-set renormalized softmax.
    pub fn log_prob(&self, ctx: &StepContext<S>, token: TokenId) -> S {
        let idx = ctx
            .legal
            .iter()
            .position(|&t| t == token)
            .expect("token must be in the legal set");
        self.legal_log_probs(ctx, S::one())[idx]
    }

    /// Log-probabilities for a sequence of (context, token) decisions.
    pub fn log_probs(&self, decisions: &[(StepContext<S>, TokenId)]) -> Vec<S> {
        decisions.iter().map(|(ctx, tok)| self.log_prob(ctx, *tok)).collect()
    }

    /// Sample a legal token; returns it with its log-probability under the
    /// sampling distribution.
    pub fn sample(&self, ctx: &StepContext<S>, temperature: S, rng: &mut impl Rng) -> (TokenId, S) {
        let log_probs = self.legal_log_probs(ctx, temperature);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &lp) in log_probs.iter().enumerate() {
            acc += lp.exp().to_f64();
            if u < acc || i == log_probs.len() - 1 {
                return (ctx.legal[i], log_probs[i]);
            }
        }
        unreachable!("sampling fell through a normalized distribution")
    }

    /// Argmax over the legal set (ties break toward the lower token id).
    pub fn greedy(&self, ctx: &StepContext<S>) -> TokenId {
        let logits = self.logits(ctx);
        *ctx.legal
            .iter()
            .max_by(|&&a, &&b| logits[a].partial_cmp(&logits[b]).unwrap_or(std::cmp::Ordering::Equal))
            .expect("legal set non-empty")
    }

    /// Accumulate `coeff · ∇θ log π(token | ctx)` into `grad`.
    pub fn accum_grad_log_prob(&self, ctx: &StepContext<S>, token: TokenId, coeff: S, grad: &mut [S]) {
        debug_assert_eq!(grad.len(), self.theta.len());
        let log_probs = self.legal_log_probs(ctx, S::one());
        // d log π(y) / d logit_j = δ_{jy} − p_j over the legal set.
        let dlogit: Vec<(TokenId, S)> = ctx
            .legal
            .iter()
            .zip(&log_probs)
            .map(|(&tok, &lp)| {
                let p = lp.exp();
                let delta = if tok == token { S::one() } else { S::zero() };
                (tok, coeff * (delta - p))
            })
            .collect();
        match self.kind {
            PolicyKind::TabularBigram => {
                let row = ctx.prev_token * self.vocab_size;
                for (tok, d) in dlogit {
                    grad[row + tok] = grad[row + tok] + d;
                }
            }
            PolicyKind::TinyMlp => {
                let h = self.hidden_act(&ctx.features);
                let w2 = self.w2_off();
                let b2 = self.b2_off();
                let mut dh = vec![S::zero(); self.hidden];
                for &(tok, d) in &dlogit {
                    grad[b2 + tok] = grad[b2 + tok] + d;
                    for (j, hv) in h.iter().enumerate() {
                        grad[w2 + j * self.vocab_size + tok] =
                            grad[w2 + j * self.vocab_size + tok] + d * *hv;
                        dh[j] = dh[j] + d * self.theta[w2 + j * self.vocab_size + tok];
                    }
                }
                let b1 = self.b1_off();
                for (j, dhj) in dh.iter().enumerate() {
                    let dpre = *dhj * (S::one() - h[j] * h[j]);
                    grad[b1 + j] = grad[b1 + j] + dpre;
                    for &(i, v) in &ctx.features.active {
                        grad[i * self.hidden + j] = grad[i * self.hidden + j] + dpre * v;
                    }
                }
            }
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), PolicyError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| PolicyError::Io(e.to_string()))?;
        crate::data::write_atomic(path, &json).map_err(|e| PolicyError::Io(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Io(e.to_string()))?;
        let policy: TokenPolicy<S> =
            serde_json::from_str(&text).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let expect = match policy.kind {
            PolicyKind::TabularBigram => policy.vocab_size * policy.vocab_size,
            PolicyKind::TinyMlp => {
                policy.feature_dim * policy.hidden
                    + policy.hidden
                    + policy.hidden * policy.vocab_size
                    + policy.vocab_size
            }
        };
        if policy.theta.len() != expect {
            return Err(PolicyError::Checkpoint(format!(
                "theta length {} does not match dimensions (expected {expect})",
                policy.theta.len()
            )));
        }
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx_all_legal(vocab: usize, prev: TokenId) -> StepContext<f64> {
        StepContext { prev_token: prev, features: Features::new(0), legal: (0..vocab).collect() }
    }

    #[test]
    fn uniform_bigram_gives_uniform_log_probs() {
        let policy = TokenPolicy::<f64>::tabular_bigram(4);
        let ctx = ctx_all_legal(4, 0);
        for tok in 0..4 {
            assert!((policy.log_prob(&ctx, tok) - (0.25f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn boosted_logit_dominates() {
        let mut policy = TokenPolicy::<f64>::tabular_bigram(4);
        policy.theta[2] = 12.0; // row of prev token 0, column 2
        let ctx = ctx_all_legal(4, 0);
        let lp = policy.log_prob(&ctx, 2);
        assert!(lp < 0.0 && lp > -1e-4, "log prob approaches 0 from below: {lp}");
    }

    #[test]
    fn matches_brute_force_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut policy = TokenPolicy::<f64>::tabular_bigram(6);
        for t in policy.theta.iter_mut() {
            *t = rng.gen::<f64>() * 4.0 - 2.0;
        }
        let ctx = StepContext {
            prev_token: 3,
            features: Features::new(0),
            legal: vec![0, 2, 4, 5],
        };
        for (i, &tok) in ctx.legal.iter().enumerate() {
            let num = (policy.theta[3 * 6 + tok]).exp();
            let den: f64 = ctx.legal.iter().map(|&t| policy.theta[3 * 6 + t].exp()).sum();
            let brute = (num / den).ln();
            assert!((policy.legal_log_probs(&ctx, 1.0)[i] - brute).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_token_has_zero_probability_mass() {
        let policy = TokenPolicy::<f64>::tabular_bigram(5);
        let ctx = StepContext { prev_token: 0, features: Features::new(0), legal: vec![1, 3] };
        let lps = policy.legal_log_probs(&ctx, 1.0);
        let total: f64 = lps.iter().map(|lp| lp.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(lps.len(), 2);
    }

    #[test]
    fn single_legal_token_is_forced_with_zero_grad() {
        let policy = TokenPolicy::<f64>::tabular_bigram(4);
        let ctx = StepContext { prev_token: 1, features: Features::new(0), legal: vec![2] };
        assert_eq!(policy.log_prob(&ctx, 2), 0.0);
        let mut grad = vec![0.0; policy.param_len()];
        policy.accum_grad_log_prob(&ctx, 2, 1.0, &mut grad);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn bigram_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut policy = TokenPolicy::<f64>::tabular_bigram(5);
        for t in policy.theta.iter_mut() {
            *t = rng.gen::<f64>() - 0.5;
        }
        let ctx = StepContext { prev_token: 2, features: Features::new(0), legal: vec![0, 1, 4] };
        let mut grad = vec![0.0; policy.param_len()];
        policy.accum_grad_log_prob(&ctx, 4, 1.0, &mut grad);
        let eps = 1e-6;
        for i in 0..policy.param_len() {
            let mut plus = policy.clone();
            plus.theta[i] += eps;
            let mut minus = policy.clone();
            minus.theta[i] -= eps;
            let fd = (plus.log_prob(&ctx, 4) - minus.log_prob(&ctx, 4)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: fd {fd} vs {g}", g = grad[i]);
        }
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn mlp_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let policy = TokenPolicy::<f64>::tiny_mlp(6, 4, 3, &mut rng);
        let mut features = Features::new(4);
        features.push(0, 1.0);
        features.push(3, 0.5);
        let ctx = StepContext { prev_token: 0, features, legal: vec![1, 2, 5] };
        let mut grad = vec![0.0; policy.param_len()];
        policy.accum_grad_log_prob(&ctx, 2, 1.0, &mut grad);
        let eps = 1e-6;
        for i in 0..policy.param_len() {
            let mut plus = policy.clone();
            plus.theta[i] += eps;
            let mut minus = policy.clone();
            minus.theta[i] -= eps;
            let fd = (plus.log_prob(&ctx, 2) - minus.log_prob(&ctx, 2)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-6, "param {i}: fd {fd} vs {g}", g = grad[i]);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let policy = TokenPolicy::<f64>::tabular_bigram(8);
        let ctx = ctx_all_legal(8, 0);
        for _ in 0..32 {
            assert_eq!(policy.sample(&ctx, 1.0, &mut rng_a), policy.sample(&ctx, 1.0, &mut rng_b));
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let policy = TokenPolicy::<f64>::tiny_mlp(10, 7, 4, &mut rng);
        policy.save(&path).unwrap();
        let back = TokenPolicy::<f64>::load(&path).unwrap();
        assert_eq!(policy.theta, back.theta);
        assert_eq!(back.kind, PolicyKind::TinyMlp);
    }
}
