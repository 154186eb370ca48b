//! Adaptive-moment optimizer over flattened parameter vectors.

use super::{c, Scalar};

pub struct Adam<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    t: u64,
    m: Vec<F>,
    v: Vec<F>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Adam {
            learning_rate: c(learning_rate),
            beta1: c(0.9),
            beta2: c(0.999),
            eps: c(1e-8),
            t: 0,
            m: vec![F::zero(); n_params],
            v: vec![F::zero(); n_params],
        }
    }

    /// One bias-corrected update step. `params` and `grads` must have the
    /// length this optimizer was created with.
    pub fn step(&mut self, params: &mut [F], grads: &[F]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = F::one();
        let b1 = self.beta1;
        let b2 = self.beta2;
        let bc1 = one - b1.powi(self.t as i32);
        let bc2 = one - b2.powi(self.t as i32);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = b1 * self.m[k] + (one - b1) * g;
            self.v[k] = b2 * self.v[k] + (one - b2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
