use super::{ControlAffine, LearnedDynamics, SystemSpec};
use crate::grid::Grid;
use crate::linalg::norm2;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Ingredients and value of the decrease margin `b = M(K_dyn δ + ε + K_φ δ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginEstimate<T> {
    /// Bound on `‖∇V‖`.
    pub m: T,
    pub k_dyn: T,
    pub k_phi: T,
    pub epsilon: T,
    pub delta: T,
    pub b: T,
}

pub fn robustness_margin<T: Scalar>(m: T, k_dyn: T, k_phi: T, epsilon: T, delta: T) -> Result<T> {
    if !(m > T::zero()) || !(delta > T::zero()) {
        return Err(Error::InvalidInput(format!("margin needs M > 0 and δ > 0, got M = {m}, δ = {delta}")));
    }
    if k_dyn < T::zero() || k_phi < T::zero() || epsilon < T::zero() {
        return Err(Error::InvalidInput("Lipschitz constants and fit error must be non-negative".into()));
    }
    Ok(m * (k_dyn * delta + epsilon + k_phi * delta))
}

/// Largest finite-difference slope `‖F(a) − F(b)‖ / ‖a − b‖` between
/// neighbouring lattice points.
pub fn lipschitz_estimate<T: Scalar>(grid: &Grid<T>, mut f: impl FnMut(&[T]) -> Vec<T>) -> T {
    let shape = grid.shape();
    let values: Vec<Vec<T>> = (0..grid.len()).map(|i| f(&grid.point(i))).collect();
    let mut strides = vec![1usize; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    let mut best = T::zero();
    for idx in 0..grid.len() {
        for d in 0..shape.len() {
            let coord = (idx / strides[d]) % shape[d];
            if coord + 1 >= shape[d] {
                continue;
            }
            let next = idx + strides[d];
            let step = grid.axes()[d][coord + 1] - grid.axes()[d][coord];
            let diff: Vec<T> = values[next].iter().zip(&values[idx]).map(|(&a, &b)| a - b).collect();
            best = best.max(norm2(&diff) / step);
        }
    }
    best
}

/// Margin for training a CLF against `learned` while the true dynamics is `system`.
///
/// `M` is the largest `‖∇V‖` on the grid, `K_dyn` and `K_φ` the slopes of the
/// true and learned closed-loop velocity at `u*`, and `ε` the learned model's fit error.
pub fn estimate_margin<T: Scalar>(
    system: &SystemSpec<T>,
    learned: &LearnedDynamics<T>,
    mut grad_v: impl FnMut(&[T]) -> Vec<T>,
    grid: &Grid<T>,
    delta: T,
) -> Result<MarginEstimate<T>> {
    let u = system.equilibrium_control().to_vec();
    let m = (0..grid.len()).map(|i| norm2(&grad_v(&grid.point(i)))).fold(T::zero(), T::max);
    let k_dyn = lipschitz_estimate(grid, |s| system.velocity(s, &u));
    let k_phi = lipschitz_estimate(grid, |s| learned.velocity(s, &u));
    let epsilon = learned.fit_error();
    if !epsilon.is_finite() {
        return Err(Error::InvalidInput("learned dynamics has no measured fit error".into()));
    }
    let b = robustness_margin(m, k_dyn, k_phi, epsilon, delta)?;
    Ok(MarginEstimate { m, k_dyn, k_phi, epsilon, delta, b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Region;

    #[test]
    fn margin_examples() {
        let b: f64 = robustness_margin(2.0, 10.0, 10.0, 0.01, 2e-3).unwrap();
        assert!((b - 0.1).abs() < 1e-15);
        assert_eq!(robustness_margin(1.0, 1.0, 1.0, 1.0, 1.0).unwrap(), 3.0);
        assert!(robustness_margin(1.0, 1.0, 1.0, 0.0, 1e-300).unwrap() < 1e-299);
        assert!(robustness_margin(0.0, 1.0, 1.0, 0.0, 1.0).is_err());
        assert!(robustness_margin(1.0, 1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn lipschitz_of_linear_map_is_its_largest_axis_gain() {
        let grid = Grid::new(&Region::symmetric(2, 1.0).unwrap(), 0.25).unwrap();
        let k: f64 = lipschitz_estimate(&grid, |s| vec![3.0 * s[0], -0.5 * s[1]]);
        assert!((k - 3.0).abs() < 1e-12);
    }
}
