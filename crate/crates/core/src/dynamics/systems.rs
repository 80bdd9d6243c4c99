use super::ControlAffine;
use crate::linalg::{norm2, Matrix};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Axis-aligned box `Ω = Π [loᵢ, hiᵢ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Region<T> {
    bounds: Vec<(T, T)>,
}

impl<T: Scalar> Region<T> {
    pub fn new(bounds: Vec<(T, T)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidInput("region needs at least one axis".into()));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidInput(format!("region axis {i}: need finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        Ok(Self { bounds })
    }

    /// `[-half, half]ⁿ`.
    pub fn symmetric(n: usize, half: T) -> Result<Self> {
        Self::new(vec![(-half, half); n])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(T, T)] {
        &self.bounds
    }

    pub fn contains(&self, s: &[T]) -> bool {
        s.len() == self.dim() && s.iter().zip(&self.bounds).all(|(&x, &(lo, hi))| lo <= x && x <= hi)
    }

    /// Scales every axis by `factor` about its midpoint.
    pub fn inflated(&self, factor: T) -> Self {
        let half = T::lit(0.5);
        let bounds = self
            .bounds
            .iter()
            .map(|&(lo, hi)| {
                let (mid, rad) = ((lo + hi) * half, (hi - lo) * half * factor);
                (mid - rad, mid + rad)
            })
            .collect();
        Self { bounds }
    }

    pub fn min_extent(&self) -> T {
        self.bounds.iter().map(|&(lo, hi)| hi - lo).fold(T::infinity(), T::min)
    }
}

/// The benchmark dynamics and a generic linear system.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind<T> {
    /// `θ̇ = ω`, `ω̇ = (m g l sin θ − D ω + u) / (m l²)`; state `(θ, ω)`.
    Pendulum { mass: T, length: T, damping: T, gravity: T },
    /// `ḋ = v sin θ`, `θ̇ = −v cos θ / (1 − d κ) + u`; state `(d_e, θ_e)`.
    PathFollowing { speed: T, curvature: T },
    /// Hill–Clohessy–Wiltshire relative motion; state `(x, y, vₓ, v_y)`.
    ///
    /// With `standard_form` unset the `v̇_y` row reads `−2n v_y + u₂`;
    /// set, it uses the textbook `−2n vₓ + u₂`.
    Spacecraft { mean_motion: T, standard_form: bool },
    /// Planar quadrotor; state `(x, y, θ, vₓ, v_y, w)`, controls are the two rotor thrusts.
    Quadrotor { mass: T, arm: T, inertia: T, gravity: T },
    /// `ṡ = A s + B u`.
    Linear { a: Matrix<T>, b: Matrix<T> },
}

impl<T: Scalar> SystemKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Pendulum { .. } => "pendulum",
            Self::PathFollowing { .. } => "path_following",
            Self::Spacecraft { .. } => "spacecraft",
            Self::Quadrotor { .. } => "quadrotor",
            Self::Linear { .. } => "linear",
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Pendulum { .. } | Self::PathFollowing { .. } => 2,
            Self::Spacecraft { .. } => 4,
            Self::Quadrotor { .. } => 6,
            Self::Linear { a, .. } => a.rows(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Self::Pendulum { .. } | Self::PathFollowing { .. } => 1,
            Self::Spacecraft { .. } | Self::Quadrotor { .. } => 2,
            Self::Linear { b, .. } => b.cols(),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} parameter `{name}` must be positive, got {v}", self.name())))
            }
        };
        match self {
            Self::Pendulum { mass, length, damping, gravity } => {
                positive("mass", *mass)?;
                positive("length", *length)?;
                positive("gravity", *gravity)?;
                if *damping < T::zero() {
                    return Err(Error::Config("pendulum damping must be non-negative".into()));
                }
            }
            Self::PathFollowing { speed, curvature } => {
                positive("speed", *speed)?;
                if !curvature.is_finite() {
                    return Err(Error::Config("path curvature must be finite".into()));
                }
            }
            Self::Spacecraft { mean_motion, .. } => positive("mean_motion", *mean_motion)?,
            Self::Quadrotor { mass, arm, inertia, gravity } => {
                positive("mass", *mass)?;
                positive("arm", *arm)?;
                positive("inertia", *inertia)?;
                positive("gravity", *gravity)?;
            }
            Self::Linear { a, b } => {
                if !a.is_square() || a.rows() != b.rows() || b.cols() == 0 {
                    return Err(Error::Config(format!(
                        "linear system needs square A (n×n) and B (n×m), got {:?} and {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    fn drift_into(&self, s: &[T], out: &mut [T]) {
        let two = T::lit(2.0);
        let three = T::lit(3.0);
        match self {
            Self::Pendulum { mass, length, damping, gravity } => {
                let inertia = *mass * *length * *length;
                out[0] = s[1];
                out[1] = (*mass * *gravity * *length * s[0].sin() - *damping * s[1]) / inertia;
            }
            Self::PathFollowing { speed, curvature } => {
                out[0] = *speed * s[1].sin();
                out[1] = -(*speed * s[1].cos()) / (T::one() - s[0] * *curvature);
            }
            Self::Spacecraft { mean_motion: n, standard_form } => {
                let (x, vx, vy) = (s[0], s[2], s[3]);
                out[0] = vx;
                out[1] = vy;
                out[2] = three * *n * *n * x + two * *n * vy;
                out[3] = if *standard_form { -two * *n * vx } else { -two * *n * vy };
            }
            Self::Quadrotor { gravity, .. } => {
                out[0] = s[3];
                out[1] = s[4];
                out[2] = s[5];
                out[3] = T::zero();
                out[4] = -*gravity;
                out[5] = T::zero();
            }
            Self::Linear { a, .. } => {
                let n = a.rows();
                for i in 0..n {
                    out[i] = a.row(i).iter().zip(s).map(|(&w, &x)| w * x).sum();
                }
            }
        }
    }

    fn input_matrix_into(&self, s: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|x| *x = T::zero());
        match self {
            Self::Pendulum { mass, length, .. } => {
                out[1] = T::one() / (*mass * *length * *length);
            }
            Self::PathFollowing { .. } => {
                out[1] = T::one();
            }
            Self::Spacecraft { .. } => {
                // rows (x, y, vx, vy), columns (u1, u2)
                out[2 * 2] = T::one();
                out[3 * 2 + 1] = T::one();
            }
            Self::Quadrotor { mass, arm, inertia, .. } => {
                let (sin, cos) = s[2].sin_cos();
                out[3 * 2] = -sin / *mass;
                out[3 * 2 + 1] = -sin / *mass;
                out[4 * 2] = cos / *mass;
                out[4 * 2 + 1] = cos / *mass;
                out[5 * 2] = *arm / *inertia;
                out[5 * 2 + 1] = -*arm / *inertia;
            }
            Self::Linear { b, .. } => out.copy_from_slice(b.as_slice()),
        }
    }

    /// Analytic `∂(f + g u)/∂s`.
    fn velocity_jacobian(&self, s: &[T], u: &[T]) -> Matrix<T> {
        let n = self.state_dim();
        let mut j = Matrix::zeros(n, n);
        let two = T::lit(2.0);
        match self {
            Self::Pendulum { mass, length, damping, gravity } => {
                let inertia = *mass * *length * *length;
                j[(0, 1)] = T::one();
                j[(1, 0)] = *mass * *gravity * *length * s[0].cos() / inertia;
                j[(1, 1)] = -*damping / inertia;
            }
            Self::PathFollowing { speed, curvature } => {
                let denom = T::one() - s[0] * *curvature;
                j[(0, 1)] = *speed * s[1].cos();
                j[(1, 0)] = -(*speed * s[1].cos() * *curvature) / (denom * denom);
                j[(1, 1)] = *speed * s[1].sin() / denom;
            }
            Self::Spacecraft { mean_motion: nm, standard_form } => {
                j[(0, 2)] = T::one();
                j[(1, 3)] = T::one();
                j[(2, 0)] = T::lit(3.0) * *nm * *nm;
                j[(2, 3)] = two * *nm;
                if *standard_form {
                    j[(3, 2)] = -two * *nm;
                } else {
                    j[(3, 3)] = -two * *nm;
                }
            }
            Self::Quadrotor { mass, .. } => {
                let (sin, cos) = s[2].sin_cos();
                let thrust = u[0] + u[1];
                j[(0, 3)] = T::one();
                j[(1, 4)] = T::one();
                j[(2, 5)] = T::one();
                j[(3, 2)] = -cos * thrust / *mass;
                j[(4, 2)] = -sin * thrust / *mass;
            }
            Self::Linear { a, .. } => j = a.clone(),
        }
        j
    }
}

/// A control-affine system together with its verified region, control
/// bounds and equilibrium pair `(s*, u*)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemSpec<T> {
    kind: SystemKind<T>,
    region: Region<T>,
    u_min: Vec<T>,
    u_max: Vec<T>,
    equilibrium: Vec<T>,
    equilibrium_control: Vec<T>,
}

const EQUILIBRIUM_TOL: f64 = 1e-10;

impl<T: Scalar> SystemSpec<T> {
    /// Builds a system whose equilibrium state is the origin.
    pub fn new(kind: SystemKind<T>, region: Region<T>, u_min: Vec<T>, u_max: Vec<T>) -> Result<Self> {
        let s_eq = vec![T::zero(); kind.state_dim()];
        Self::with_equilibrium(kind, region, u_min, u_max, s_eq)
    }

    pub fn with_equilibrium(
        kind: SystemKind<T>,
        region: Region<T>,
        u_min: Vec<T>,
        u_max: Vec<T>,
        equilibrium: Vec<T>,
    ) -> Result<Self> {
        kind.validate()?;
        let (n, m) = (kind.state_dim(), kind.control_dim());
        if region.dim() != n {
            return Err(Error::Dimension { what: "region dimension", expected: n, actual: region.dim() });
        }
        if u_min.len() != m || u_max.len() != m {
            return Err(Error::Dimension { what: "control bounds", expected: m, actual: u_min.len().min(u_max.len()) });
        }
        if u_min.iter().zip(&u_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::Config("control bounds need u_min < u_max elementwise".into()));
        }
        if equilibrium.len() != n {
            return Err(Error::Dimension { what: "equilibrium state", expected: n, actual: equilibrium.len() });
        }
        if !region.contains(&equilibrium) {
            return Err(Error::Config("equilibrium state lies outside the region".into()));
        }
        let mut spec = Self { kind, region, u_min, u_max, equilibrium, equilibrium_control: vec![T::zero(); m] };
        spec.equilibrium_control = spec.solve_equilibrium_control()?;
        Ok(spec)
    }

    /// Inverted pendulum with `D = 0.1`, `g = 9.81`, `Ω = [−4, 4]²`, `|u| ≤ 20`.
    pub fn pendulum(mass: T, length: T) -> Result<Self> {
        Self::new(
            SystemKind::Pendulum { mass, length, damping: T::lit(0.1), gravity: T::lit(9.81) },
            Region::symmetric(2, T::lit(4.0))?,
            vec![T::lit(-20.0)],
            vec![T::lit(20.0)],
        )
    }

    /// Unicycle path following with `Ω = [−0.8, 0.8]²`, `|u| ≤ 5`.
    pub fn path_following(speed: T, curvature: T) -> Result<Self> {
        Self::new(
            SystemKind::PathFollowing { speed, curvature },
            Region::symmetric(2, T::lit(0.8))?,
            vec![T::lit(-5.0)],
            vec![T::lit(5.0)],
        )
    }

    /// HCW rendezvous in low Earth orbit, `n = 1.1127e-3`, `Ω = [−1, 1]⁴`, `|uᵢ| ≤ 1`.
    pub fn spacecraft(standard_form: bool) -> Result<Self> {
        Self::new(
            SystemKind::Spacecraft { mean_motion: T::lit(1.1127e-3), standard_form },
            Region::symmetric(4, T::one())?,
            vec![-T::one(); 2],
            vec![T::one(); 2],
        )
    }

    /// Planar quadrotor `(m, l, I, g) = (0.486, 0.25, 0.00383, 9.81)`, `Ω = [−1, 1]⁶`, thrusts in `[0, 8]`.
    pub fn quadrotor() -> Result<Self> {
        Self::new(
            SystemKind::Quadrotor {
                mass: T::lit(0.486),
                arm: T::lit(0.25),
                inertia: T::lit(0.00383),
                gravity: T::lit(9.81),
            },
            Region::symmetric(6, T::one())?,
            vec![T::zero(); 2],
            vec![T::lit(8.0); 2],
        )
    }

    pub fn kind(&self) -> &SystemKind<T> {
        &self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn region(&self) -> &Region<T> {
        &self.region
    }

    pub fn u_min(&self) -> &[T] {
        &self.u_min
    }

    pub fn u_max(&self) -> &[T] {
        &self.u_max
    }

    pub fn equilibrium(&self) -> &[T] {
        &self.equilibrium
    }

    pub fn equilibrium_control(&self) -> &[T] {
        &self.equilibrium_control
    }

    /// Least-squares `u*` with `g(s*)u* = −f(s*)`.
    fn solve_equilibrium_control(&self) -> Result<Vec<T>> {
        let s = &self.equilibrium;
        let f = self.drift(s);
        let g = self.input_matrix(s);
        let gt = g.transpose();
        let rhs: Vec<T> = gt.mul_vec(&f)?.into_iter().map(|x| -x).collect();
        let normal = gt.matmul(&g)?;
        let u = match normal.solve(&rhs) {
            Ok(u) => u,
            // Rank-deficient g(s*): only acceptable when the drift already vanishes.
            Err(Error::Singular(_)) => vec![T::zero(); self.control_dim()],
            Err(e) => return Err(e),
        };
        let residual = norm2(&self.velocity(s, &u));
        if residual.to_f64_lossy() > EQUILIBRIUM_TOL {
            return Err(Error::NoEquilibriumControl { residual: residual.to_f64_lossy() });
        }
        Ok(u)
    }

    /// `(A, B)` with `A = ∂(f + g u*)/∂s` and `B = g` at `s*`.
    pub fn linearize(&self) -> (Matrix<T>, Matrix<T>) {
        let a = self.kind.velocity_jacobian(&self.equilibrium, &self.equilibrium_control);
        (a, self.input_matrix(&self.equilibrium))
    }

    /// Analytic `∂(f + g u)/∂s` at an arbitrary state and control.
    pub fn velocity_jacobian(&self, s: &[T], u: &[T]) -> Matrix<T> {
        self.kind.velocity_jacobian(s, u)
    }
}

impl<T: Scalar> ControlAffine<T> for SystemSpec<T> {
    fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    fn control_dim(&self) -> usize {
        self.kind.control_dim()
    }

    #[inline]
    fn drift_into(&self, s: &[T], out: &mut [T]) {
        self.kind.drift_into(s, out)
    }

    #[inline]
    fn input_matrix_into(&self, s: &[T], out: &mut [T]) {
        self.kind.input_matrix_into(s, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::finite_difference_jacobian;

    fn all_systems() -> Vec<SystemSpec<f64>> {
        vec![
            SystemSpec::pendulum(1.0, 1.0).unwrap(),
            SystemSpec::path_following(1.0, 1.0).unwrap(),
            SystemSpec::spacecraft(false).unwrap(),
            SystemSpec::quadrotor().unwrap(),
        ]
    }

    #[test]
    fn pendulum_drift_and_input() {
        let sys = SystemSpec::pendulum(1.0, 1.0).unwrap();
        let f = sys.drift(&[0.0, 1.0]);
        assert_eq!(f, vec![1.0, -0.1]);
        assert_eq!(sys.input_matrix(&[0.0, 1.0]).as_slice(), &[0.0, 1.0]);
        assert_eq!(sys.drift(&[0.0, 0.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn path_following_drift_and_input() {
        let sys = SystemSpec::path_following(1.0, 1.0).unwrap();
        assert_eq!(sys.drift(&[0.0, 0.0]), vec![0.0, -1.0]);
        assert_eq!(sys.input_matrix(&[0.0, 0.0]).as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn equilibrium_controls() {
        assert_eq!(SystemSpec::<f64>::pendulum(1.0, 1.0).unwrap().equilibrium_control(), &[0.0]);
        let pf = SystemSpec::<f64>::path_following(1.0, 1.0).unwrap();
        assert!((pf.equilibrium_control()[0] - 1.0).abs() < 1e-12);
        assert_eq!(SystemSpec::<f64>::spacecraft(false).unwrap().equilibrium_control(), &[0.0, 0.0]);
        let quad = SystemSpec::<f64>::quadrotor().unwrap();
        let hover: f64 = 0.486 * 9.81 / 2.0;
        for u in quad.equilibrium_control() {
            assert!((u - hover).abs() < 1e-12);
        }
    }

    #[test]
    fn every_system_rests_at_its_equilibrium() {
        for sys in all_systems() {
            let v = sys.velocity(sys.equilibrium(), sys.equilibrium_control());
            assert!(norm2(&v) <= 1e-10, "{}: residual {v:?}", sys.name());
        }
    }

    #[test]
    fn unreachable_equilibrium_is_rejected() {
        // ẋ = x + 1 with no actuation cannot rest at the origin.
        let a = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let kind = SystemKind::Linear { a, b };
        let region = Region::symmetric(1, 1.0).unwrap();
        let err = SystemSpec::with_equilibrium(kind, region, vec![-1.0], vec![1.0], vec![0.5]).unwrap_err();
        assert!(matches!(err, Error::NoEquilibriumControl { .. }));
    }

    #[test]
    fn pendulum_linearization() {
        let (a, b) = SystemSpec::pendulum(1.0, 1.0).unwrap().linearize();
        assert_eq!(a.to_rows(), vec![vec![0.0, 1.0], vec![9.81, -0.1]]);
        assert_eq!(b.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn spacecraft_linearization_is_printed_coefficients() {
        let sys = SystemSpec::<f64>::spacecraft(false).unwrap();
        let (a, _) = sys.linearize();
        let n = 1.1127e-3;
        let expect = Matrix::from_rows(&[
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![3.0 * n * n, 0.0, 0.0, 2.0 * n],
            vec![0.0, 0.0, 0.0, -2.0 * n],
        ])
        .unwrap();
        assert_eq!(a, expect);
        let (std_a, _) = SystemSpec::<f64>::spacecraft(true).unwrap().linearize();
        assert_eq!(std_a[(3, 2)], -2.0 * n);
        assert_eq!(std_a[(3, 3)], 0.0);
    }

    #[test]
    fn linearization_matches_finite_differences() {
        for sys in all_systems() {
            let (a, _) = sys.linearize();
            let fd = finite_difference_jacobian(&sys, sys.equilibrium(), sys.equilibrium_control(), 1e-6);
            let scale = a.max_abs().max(1.0);
            let err = a.sub(&fd).unwrap().max_abs() / scale;
            assert!(err <= 1e-6, "{}: rel err {err}", sys.name());
        }
    }

    #[test]
    fn velocity_jacobian_matches_finite_differences_off_equilibrium() {
        for sys in all_systems() {
            let n = sys.state_dim();
            let s: Vec<f64> = (0..n).map(|i| 0.3 - 0.17 * i as f64).collect();
            let u: Vec<f64> = (0..sys.control_dim()).map(|k| 0.5 + k as f64).collect();
            let a = sys.velocity_jacobian(&s, &u);
            let fd = finite_difference_jacobian(&sys, &s, &u, 1e-6);
            let err = a.sub(&fd).unwrap().max_abs() / a.max_abs().max(1.0);
            assert!(err <= 1e-6, "{}: rel err {err}", sys.name());
        }
    }

    #[test]
    fn dynamics_are_lipschitz_on_region_grid() {
        // Bounded finite-difference slopes on a coarse grid over Ω.
        for sys in [SystemSpec::pendulum(1.5, 0.8).unwrap(), SystemSpec::path_following(2.0, 1.2).unwrap()] {
            let (lo0, hi0) = sys.region().bounds()[0];
            let (lo1, hi1) = sys.region().bounds()[1];
            let mut max_slope = 0.0f64;
            for i in 0..=20 {
                for j in 0..=20 {
                    let s = [lo0 + (hi0 - lo0) * i as f64 / 20.0, lo1 + (hi1 - lo1) * j as f64 / 20.0];
                    let jac = sys.velocity_jacobian(&s, &[0.0]);
                    max_slope = max_slope.max(jac.frobenius_norm());
                }
            }
            assert!(max_slope.is_finite() && max_slope < 1e4, "{}: {max_slope}", sys.name());
        }
    }

    #[test]
    fn bad_configuration_is_rejected() {
        assert!(SystemSpec::<f64>::pendulum(-1.0, 1.0).is_err());
        let region = Region::symmetric(2, 1.0).unwrap();
        let kind = SystemKind::PathFollowing { speed: 1.0, curvature: 1.0 };
        assert!(SystemSpec::new(kind, region, vec![1.0], vec![-1.0]).is_err());
        assert!(Region::<f64>::new(vec![(1.0, 0.0)]).is_err());
    }
}
