//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    skipped: u64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Updates applied so far.
    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Updates skipped because of a non-finite gradient.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// One update with a single learning rate. Returns `false` when skipped.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> bool {
        self.step_split(params, grads, params.len(), lr, lr)
    }

    /// Entries before `split` use `lr_a`, the rest `lr_b`.
    pub fn step_split(&mut self, params: &mut [f64], grads: &[f64], split: usize, lr_a: f64, lr_b: f64) -> bool {
        assert_eq!(params.len(), self.m.len(), "parameter length");
        assert_eq!(grads.len(), self.m.len(), "gradient length");
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            log::warn!("non-finite gradient; skipping update ({} skipped so far)", self.skipped);
            return false;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, ((p, &g), (m, v))) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .enumerate()
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            let lr = if k < split { lr_a } else { lr_b };
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut adam = Adam::new(1, 0.9, 0.999, 1e-8);
        let mut p = [3.0];
        adam.step(&mut p, &[1.0], 0.1);
        assert!((p[0] - 2.9).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = [1.0, -2.0];
        adam.step(&mut p, &[0.0, 0.0], 0.1);
        assert_eq!(p, [1.0, -2.0]);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut adam = Adam::new(2, 0.9, 0.999, 1e-8);
        let mut p = [1.0, 1.0];
        assert!(!adam.step(&mut p, &[f64::NAN, 1.0], 0.1));
        assert_eq!(p, [1.0, 1.0]);
        assert_eq!((adam.skipped(), adam.steps()), (1, 0));
    }
}
