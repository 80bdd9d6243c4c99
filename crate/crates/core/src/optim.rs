//! First-order optimizers over flat parameter buffers.

use crate::scalar::Scalar;

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    /// `β₁ = 0.9`, `β₂ = 0.999`, `eps = 1e-8`.
    pub fn new(lr: T, num_params: usize) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); num_params],
            v: vec![T::zero(); num_params],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut [T], grad: &[T]) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed under the optimizer");
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.t);
        let c2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_against_gradient_by_lr() {
        // Toy loss (p - 3)²: finite-difference slope at p = 0 is negative.
        let loss = |p: f64| (p - 3.0) * (p - 3.0);
        let mut p = [0.0];
        let fd = (loss(1e-6) - loss(-1e-6)) / 2e-6;
        let mut adam = Adam::new(0.01, 1);
        adam.step(&mut p, &[fd]);
        assert!(p[0] > 0.0);
        assert!((p[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn converges_on_quadratic() {
        let mut p = [5.0f64, -2.0];
        let mut adam = Adam::new(0.1, 2);
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 1.0)];
            adam.step(&mut p, &g);
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 1.0).abs() < 1e-3);
    }
}
