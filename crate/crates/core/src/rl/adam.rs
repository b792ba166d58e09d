//! Adaptive moment estimation with bias correction.

use crate::num::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub eps: S,
    t: u64,
    m: Vec<S>,
    v: Vec<S>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(lr: S, param_len: usize) -> Self {
        Adam {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            eps: S::from_f64(1e-8),
            t: 0,
            m: vec![S::zero(); param_len],
            v: vec![S::zero(); param_len],
        }
    }

    /// One descent step along `grad`.
    #[allow(clippy::needless_range_loop)]
    pub fn step(&mut self, params: &mut [S], grad: &[S]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let t = S::from_f64(self.t as f64);
        let bc1 = S::one() - self.beta1.powf(t);
        let bc2 = S::one() - self.beta2.powf(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (S::one() - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (S::one() - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] = params[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
