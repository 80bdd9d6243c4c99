//! Control-affine dynamics `ṡ = f(s) + g(s)u`: the analytic benchmark
//! systems, linearization, equilibrium control, regression-learned dynamics
//! and the robustness margin.

mod learned;
mod margin;
mod systems;

pub use learned::{dynamics_loss, generate_dynamics_samples, pretrain_dynamics, DynamicsSample, LearnedDynamics, PretrainConfig};
pub use margin::{estimate_margin, lipschitz_estimate, robustness_margin, MarginEstimate};
pub use systems::{Region, SystemKind, SystemSpec};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Anything that can report drift and input matrix at a state.
pub trait ControlAffine<T: Scalar> {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Writes `f(s)` into `out` (length `n`).
    fn drift_into(&self, s: &[T], out: &mut [T]);

    /// Writes `g(s)` into `out` as an `n×m` row-major block.
    fn input_matrix_into(&self, s: &[T], out: &mut [T]);

    fn drift(&self, s: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.state_dim()];
        self.drift_into(s, &mut out);
        out
    }

    fn input_matrix(&self, s: &[T]) -> Matrix<T> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut out = vec![T::zero(); n * m];
        self.input_matrix_into(s, &mut out);
        Matrix::from_row_major(n, m, out).expect("shape fixed above")
    }

    /// `f(s) + g(s)u`.
    fn velocity(&self, s: &[T], u: &[T]) -> Vec<T> {
        let (n, m) = (self.state_dim(), self.control_dim());
        let mut f = self.drift(s);
        let mut g = vec![T::zero(); n * m];
        self.input_matrix_into(s, &mut g);
        for i in 0..n {
            for k in 0..m {
                f[i] += g[i * m + k] * u[k];
            }
        }
        f
    }
}

/// Central-difference Jacobian of `s ↦ f(s) + g(s)u`.
pub fn finite_difference_jacobian<T: Scalar, S: ControlAffine<T> + ?Sized>(
    system: &S,
    s: &[T],
    u: &[T],
    step: T,
) -> Matrix<T> {
    let n = system.state_dim();
    let mut jac = Matrix::zeros(n, n);
    let mut sp = s.to_vec();
    for j in 0..n {
        sp[j] = s[j] + step;
        let fp = system.velocity(&sp, u);
        sp[j] = s[j] - step;
        let fm = system.velocity(&sp, u);
        sp[j] = s[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (step + step);
        }
    }
    jac
}
