//! Linear value model over the step features.

use serde::{Deserialize, Serialize};

use super::Features;
use crate::num::Scalar;

/// `V(s) = φ·f(s) + b`. Linear so its gradients are exactly checkable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct LinearValue<S: Scalar> {
    pub feature_dim: usize,
    /// Weights followed by the bias term.
    pub phi: Vec<S>,
}

impl<S: Scalar> LinearValue<S> {
    pub fn new(feature_dim: usize) -> Self {
        LinearValue { feature_dim, phi: vec![S::zero(); feature_dim + 1] }
    }

    pub fn param_len(&self) -> usize {
        self.phi.len()
    }

    pub fn value(&self, features: &Features<S>) -> S {
        let mut v = self.phi[self.feature_dim];
        for &(i, x) in &features.active {
            v = v + self.phi[i] * x;
        }
        v
    }

    /// Accumulate `coeff · ∇φ V(s)` into `grad`.
    pub fn accum_grad(&self, features: &Features<S>, coeff: S, grad: &mut [S]) {
        debug_assert_eq!(grad.len(), self.phi.len());
        for &(i, x) in &features.active {
            grad[i] = grad[i] + coeff * x;
        }
        grad[self.feature_dim] = grad[self.feature_dim] + coeff;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_is_affine_in_features() {
        let mut vm = LinearValue::<f64>::new(3);
        vm.phi = vec![1.0, -2.0, 0.5, 10.0];
        let mut f = Features::new(3);
        f.push(0, 2.0);
        f.push(2, 4.0);
        assert_eq!(vm.value(&f), 2.0 - 0.0 + 2.0 + 10.0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn grad_matches_finite_differences() {
        let mut vm = LinearValue::<f64>::new(2);
        vm.phi = vec![0.3, -0.7, 0.1];
        let mut f = Features::new(2);
        f.push(1, 1.5);
        let mut grad = vec![0.0; vm.param_len()];
        vm.accum_grad(&f, 2.0, &mut grad);
        let eps = 1e-6;
        for i in 0..vm.param_len() {
            let mut plus = vm.clone();
            plus.phi[i] += eps;
            let mut minus = vm.clone();
            minus.phi[i] -= eps;
            let fd = 2.0 * (plus.value(&f) - minus.value(&f)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() < 1e-9);
        }
    }
}
