//! Continuous-time algebraic Riccati and Lyapunov equations for small systems.

use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::{Error, Result};

const MAX_NEWTON_ITERS: usize = 100;

/// Solves `M X + X Mᵀ = C` by Kronecker vectorization.
pub fn solve_sylvester_sym<T: Scalar>(m: &Matrix<T>, c: &Matrix<T>) -> Result<Matrix<T>> {
    let n = m.rows();
    if !m.is_square() || c.shape() != (n, n) {
        return Err(Error::Dimension { what: "Lyapunov operands", expected: n, actual: c.rows() });
    }
    let nn = n * n;
    let mut op = Matrix::zeros(nn, nn);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                op[(row, k * n + j)] += m[(i, k)];
                op[(row, i * n + k)] += m[(j, k)];
            }
        }
    }
    let x = op.solve(c.as_slice())?;
    Ok(Matrix::from_row_major(n, n, x)?.symmetrized())
}

/// Solves `AᵀX + XA + Q = 0`.
pub fn solve_lyapunov<T: Scalar>(a: &Matrix<T>, q: &Matrix<T>) -> Result<Matrix<T>> {
    solve_sylvester_sym(&a.transpose(), &q.scale(-T::one()))
}

/// Whether every eigenvalue of `A` has negative real part.
///
/// Uses the Lyapunov test: `AᵀX + XA = −I` has a positive definite solution
/// exactly when `A` is Hurwitz.
pub fn is_hurwitz<T: Scalar>(a: &Matrix<T>) -> bool {
    match solve_lyapunov(a, &Matrix::identity(a.rows())) {
        Ok(x) => x.is_finite() && x.is_positive_definite(),
        Err(_) => false,
    }
}

/// Frobenius norm of `AᵀP + PA − PBR⁻¹BᵀP + Q`.
pub fn care_residual<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, q: &Matrix<T>, r: &Matrix<T>, p: &Matrix<T>) -> Result<T> {
    let k = lqr_gain(p, b, r)?;
    let pbk = p.matmul(b)?.matmul(&k)?;
    let res = a.transpose().matmul(p)?.add(&p.matmul(a)?)?.sub(&pbk)?.add(q)?;
    Ok(res.frobenius_norm())
}

/// `K = R⁻¹BᵀP`.
pub fn lqr_gain<T: Scalar>(p: &Matrix<T>, b: &Matrix<T>, r: &Matrix<T>) -> Result<Matrix<T>> {
    let r_inv = r.inverse().map_err(|_| Error::InvalidInput("control weight R is singular".into()))?;
    r_inv.matmul(&b.transpose())?.matmul(p)
}

/// A gain `K₀` making `A − BK₀` Hurwitz, from Bass's construction.
fn initial_gain<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    let n = a.rows();
    if is_hurwitz(a) {
        return Ok(Matrix::zeros(b.cols(), n));
    }
    // β exceeds every eigenvalue's real part, so −(A + βI) is Hurwitz.
    let beta = a.frobenius_norm() + T::one();
    let shifted = a.add(&Matrix::identity(n).scale(beta))?;
    let bbt = b.matmul(&b.transpose())?;
    let x = solve_sylvester_sym(&shifted, &bbt.scale(T::lit(2.0)))?;
    let x_inv = x.inverse().map_err(|_| Error::Solver("pair (A, B) is not controllable enough to seed the Newton iteration".into()))?;
    let k0 = b.transpose().matmul(&x_inv)?;
    if !is_hurwitz(&a.sub(&b.matmul(&k0)?)?) {
        return Err(Error::Solver("could not find a stabilizing initial gain; (A, B) may not be stabilizable".into()));
    }
    Ok(k0)
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0` by Newton–Kleinman iteration.
pub fn solve_care<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>, q: &Matrix<T>, r: &Matrix<T>) -> Result<Matrix<T>> {
    let (n, m) = b.shape();
    if a.shape() != (n, n) || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension { what: "Riccati operands", expected: n, actual: a.rows() });
    }
    let r_inv = r.inverse().map_err(|_| Error::InvalidInput("control weight R is singular".into()))?;
    let mut k = initial_gain(a, b)?;
    let mut p_prev: Option<Matrix<T>> = None;
    for _ in 0..MAX_NEWTON_ITERS {
        let closed = a.sub(&b.matmul(&k)?)?;
        let rhs = q.add(&k.transpose().matmul(r)?.matmul(&k)?)?;
        let p = solve_lyapunov(&closed, &rhs)?;
        if !p.is_finite() {
            return Err(Error::Solver("Newton iterate became non-finite".into()));
        }
        k = r_inv.matmul(&b.transpose())?.matmul(&p)?;
        if let Some(prev) = &p_prev {
            let step = p.sub(prev)?.frobenius_norm();
            if step <= T::epsilon() * T::lit(16.0) * p.frobenius_norm().max(T::one()) {
                return Ok(p);
            }
        }
        p_prev = Some(p);
    }
    let p = p_prev.expect("at least one iteration");
    let residual = care_residual(a, b, q, r, &p)?;
    if residual.to_f64_lossy() <= 1e-8 * p.frobenius_norm().to_f64_lossy().max(1.0) {
        return Ok(p);
    }
    Err(Error::Solver(format!("Newton–Kleinman iteration did not converge (residual {residual})")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn max_real_eigenvalue(a: &Matrix<f64>) -> f64 {
        let d = DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice());
        d.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn scalar_riccati_closed_form() {
        let p = solve_care(&m(&[vec![0.0]]), &m(&[vec![1.0]]), &m(&[vec![1.0]]), &m(&[vec![1.0]])).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-12);
        let k = lqr_gain(&p, &m(&[vec![1.0]]), &m(&[vec![1.0]])).unwrap();
        assert!((k[(0, 0)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unactuated_stable_system_reduces_to_lyapunov() {
        let p = solve_care(&m(&[vec![-1.0]]), &m(&[vec![0.0]]), &m(&[vec![1.0]]), &m(&[vec![1.0]])).unwrap();
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn unstabilizable_pair_is_a_solver_error() {
        let err = solve_care(&m(&[vec![1.0]]), &m(&[vec![0.0]]), &m(&[vec![1.0]]), &m(&[vec![1.0]])).unwrap_err();
        assert!(matches!(err, Error::Solver(_)), "{err:?}");
    }

    #[test]
    fn pendulum_riccati_residual_and_closed_loop() {
        let a = m(&[vec![0.0, 1.0], vec![9.81, -0.1]]);
        let b = m(&[vec![0.0], vec![1.0]]);
        let (q, r) = (Matrix::identity(2), Matrix::identity(1));
        let p = solve_care(&a, &b, &q, &r).unwrap();
        assert!(care_residual(&a, &b, &q, &r, &p).unwrap() <= 1e-8);
        assert!(p.is_positive_definite());
        assert_eq!(p, p.transpose());
        let k = lqr_gain(&p, &b, &r).unwrap();
        let closed = a.sub(&b.matmul(&k).unwrap()).unwrap();
        assert!(max_real_eigenvalue(&closed) < 0.0);
        assert!(is_hurwitz(&closed));
    }

    #[test]
    fn zero_p_gives_zero_gain() {
        let k = lqr_gain(&Matrix::zeros(2, 2), &m(&[vec![0.0], vec![1.0]]), &m(&[vec![1.0]])).unwrap();
        assert_eq!(k, Matrix::zeros(1, 2));
    }

    #[test]
    fn singular_r_is_rejected() {
        let err = lqr_gain(&Matrix::identity(1), &m(&[vec![1.0]]), &m(&[vec![0.0]])).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn hurwitz_test_agrees_with_eigenvalues() {
        for a in [
            m(&[vec![-1.0, 5.0], vec![0.0, -2.0]]),
            m(&[vec![0.0, 1.0], vec![-1.0, 0.0]]),
            m(&[vec![0.1, 0.0], vec![0.0, -3.0]]),
            m(&[vec![-0.5, 2.0], vec![-2.0, -0.5]]),
        ] {
            assert_eq!(is_hurwitz(&a), max_real_eigenvalue(&a) < 0.0, "{a:?}");
        }
    }

    #[test]
    fn multi_input_system_converges() {
        // Four-state double integrator pair with weak coupling.
        let a = m(&[
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.3, 0.0, 0.0, 0.2],
            vec![0.0, 0.0, -0.2, 0.0],
        ]);
        let b = m(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (q, r) = (Matrix::identity(4), Matrix::identity(2));
        let p = solve_care(&a, &b, &q, &r).unwrap();
        assert!(care_residual(&a, &b, &q, &r, &p).unwrap() <= 1e-8);
        let k = lqr_gain(&p, &b, &r).unwrap();
        assert!(max_real_eigenvalue(&a.sub(&b.matmul(&k).unwrap()).unwrap()) < 0.0);
    }
}
