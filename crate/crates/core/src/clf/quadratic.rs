use super::riccati::{care_residual, lqr_gain, solve_care};
use super::Lyapunov;
use crate::dynamics::SystemSpec;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// `V(s) = (s − s*)ᵀ P (s − s*)` with the LQR gain that produced `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticClf<T> {
    p: Matrix<T>,
    gain: Matrix<T>,
    equilibrium: Vec<T>,
}

impl<T: Scalar> QuadraticClf<T> {
    pub fn new(p: Matrix<T>, gain: Matrix<T>, equilibrium: Vec<T>) -> Result<Self> {
        let n = equilibrium.len();
        if p.shape() != (n, n) {
            return Err(Error::Dimension { what: "quadratic form", expected: n, actual: p.rows() });
        }
        if gain.cols() != n {
            return Err(Error::Dimension { what: "gain columns", expected: n, actual: gain.cols() });
        }
        Ok(Self { p, gain, equilibrium })
    }

    /// Linearizes `system` at its equilibrium and solves the Riccati equation with weights `Q`, `R`.
    pub fn lqr(system: &SystemSpec<T>, q: &Matrix<T>, r: &Matrix<T>) -> Result<Self> {
        let (a, b) = system.linearize();
        let p = solve_care(&a, &b, q, r)?;
        let k = lqr_gain(&p, &b, r)?;
        let residual = care_residual(&a, &b, q, r, &p)?;
        if residual.to_f64_lossy() > 1e-8 {
            return Err(Error::Solver(format!("Riccati residual {residual} exceeds tolerance")));
        }
        Self::new(p, k, system.equilibrium().to_vec())
    }

    pub fn p(&self) -> &Matrix<T> {
        &self.p
    }

    /// `K = R⁻¹BᵀP`; the stabilizing feedback is `u = −K(s − s*) + u*`.
    pub fn gain(&self) -> &Matrix<T> {
        &self.gain
    }
}

impl<T: Scalar> Lyapunov<T> for QuadraticClf<T> {
    fn dim(&self) -> usize {
        self.equilibrium.len()
    }

    fn equilibrium(&self) -> &[T] {
        &self.equilibrium
    }

    fn value(&self, s: &[T]) -> Result<T> {
        let e = self.error(s)?;
        let pe = self.p.mul_vec(&e)?;
        Ok(e.iter().zip(&pe).map(|(&a, &b)| a * b).sum())
    }

    fn gradient(&self, s: &[T]) -> Result<Vec<T>> {
        let e = self.error(s)?;
        // ∇V = (P + Pᵀ)e, which is 2Pe for symmetric P.
        let pe = self.p.mul_vec(&e)?;
        let pte = self.p.transpose().mul_vec(&e)?;
        Ok(pe.iter().zip(&pte).map(|(&a, &b)| a + b).collect())
    }
}

impl<T: Scalar> QuadraticClf<T> {
    fn error(&self, s: &[T]) -> Result<Vec<T>> {
        if s.len() != self.dim() {
            return Err(Error::Dimension { what: "state", expected: self.dim(), actual: s.len() });
        }
        Ok(s.iter().zip(&self.equilibrium).map(|(&a, &b)| a - b).collect())
    }
}
