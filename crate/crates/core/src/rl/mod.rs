//! Desk-scale policy optimization: token policies with exact gradients, a
//! linear value model, advantage estimation over masked token subsequences,
//! the clipped masked surrogate loss, and the FactWorld synthetic
//! environment plus its trainer.

pub mod adam;
pub mod factworld;
pub mod gae;
pub mod loss;
pub mod policy;
pub mod rollout;
pub mod train;
pub mod value;

pub use adam::Adam;
pub use factworld::{build_fact_world, FactWorld, FactWorldSpec};
pub use gae::{compute_gae, GaeConfig, LambdaMode};
pub use loss::{value_loss, vapo_loss, ClipConfig, RolloutBatch, RolloutStep, RolloutTraj};
pub use policy::{PolicyKind, TokenPolicy};
pub use train::{train_loop, TrainConfig, TrainingReport};
pub use value::LinearValue;

use crate::num::Scalar;
use crate::trajectory::TokenId;

/// Sparse feature vector: `(index, value)` pairs over a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<S: Scalar> {
    pub dim: usize,
    pub active: Vec<(usize, S)>,
}

impl<S: Scalar> Features<S> {
    pub fn new(dim: usize) -> Self {
        Features { dim, active: Vec::new() }
    }

    pub fn push(&mut self, idx: usize, value: S) {
        debug_assert!(idx < self.dim);
        self.active.push((idx, value));
    }

    pub fn to_dense(&self) -> Vec<S> {
        let mut out = vec![S::zero(); self.dim];
        for &(i, v) in &self.active {
            out[i] = out[i] + v;
        }
        out
    }
}

/// Everything a policy may condition on for one token decision: the previous
/// token, the featurized episode state, and the grammar-legal token set the
/// distribution is renormalized over.
#[derive(Debug, Clone, PartialEq)]
pub struct StepContext<S: Scalar> {
    pub prev_token: TokenId,
    pub features: Features<S>,
    /// Sorted legal next tokens; sampling and log-probabilities renormalize
    /// the softmax over exactly this set.
    pub legal: Vec<TokenId>,
}
