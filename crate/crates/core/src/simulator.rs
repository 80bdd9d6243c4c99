//! Fixed-step closed-loop rollouts.

use crate::clf::Lyapunov;
use crate::controllers::{ControlBuffers, Controller};
use crate::dynamics::{ControlAffine, Region};
use crate::linalg::norm2;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Rollout settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig<T> {
    pub dt: T,
    pub horizon: T,
    /// Stop once `‖s − s*‖` drops to this.
    pub arrival_tol: T,
    /// Leaving `Ω` inflated by this factor counts as divergence.
    pub divergence_factor: T,
}

impl<T: Scalar> Default for SimConfig<T> {
    fn default() -> Self {
        Self { dt: T::lit(0.01), horizon: T::lit(10.0), arrival_tol: T::lit(1e-4), divergence_factor: T::lit(10.0) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub dt: T,
    pub dim: usize,
    pub control_dim: usize,
    /// Row-major, one state per step including the start.
    pub states: Vec<T>,
    /// Control applied at each recorded state.
    pub controls: Vec<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    fn new(dt: T, dim: usize, control_dim: usize) -> Self {
        Self { dt, dim, control_dim, states: Vec::new(), controls: Vec::new(), values: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn state(&self, k: usize) -> &[T] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn control(&self, k: usize) -> &[T] {
        &self.controls[k * self.control_dim..(k + 1) * self.control_dim]
    }

    pub fn time(&self, k: usize) -> T {
        self.dt * T::from_usize_lossy(k)
    }

    pub fn last_state(&self) -> Option<&[T]> {
        (!self.is_empty()).then(|| self.state(self.len() - 1))
    }

    /// Largest one-step increase `V(t+dt) − V(t)`; negative when strictly decreasing.
    pub fn max_value_increase(&self) -> T {
        self.values.windows(2).map(|w| w[1] - w[0]).fold(T::neg_infinity(), |m, d| if d > m { d } else { m })
    }
}

/// Why a rollout ended early.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SimError<T: std::fmt::Debug> {
    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize, partial: Trajectory<T> },
    #[error(transparent)]
    Other(#[from] Error),
}

/// Closed-loop vector field with per-call scratch.
pub struct ClosedLoop<'a, T, S: ?Sized, L: ?Sized> {
    pub system: &'a S,
    pub controller: &'a Controller<T>,
    pub clf: &'a L,
    buf: ControlBuffers<T>,
    f: Vec<T>,
    g: Vec<T>,
}

impl<'a, T, S, L> ClosedLoop<'a, T, S, L>
where
    T: Scalar,
    S: ControlAffine<T> + ?Sized,
    L: Lyapunov<T> + ?Sized,
{
    pub fn new(system: &'a S, controller: &'a Controller<T>, clf: &'a L) -> Result<Self> {
        let (n, m) = (system.state_dim(), system.control_dim());
        if controller.control_dim() != m {
            return Err(Error::Dimension { what: "controller output", expected: m, actual: controller.control_dim() });
        }
        if clf.dim() != n {
            return Err(Error::Dimension { what: "CLF input", expected: n, actual: clf.dim() });
        }
        Ok(Self { system, controller, clf, buf: ControlBuffers::new(m), f: vec![T::zero(); n], g: vec![T::zero(); n * m] })
    }

    /// `u(s)` into the returned slice.
    pub fn control(&mut self, s: &[T]) -> Result<&[T]> {
        self.system.drift_into(s, &mut self.f);
        self.system.input_matrix_into(s, &mut self.g);
        let grad = if self.controller.uses_gradient() { self.clf.gradient(s)? } else { vec![T::zero(); s.len()] };
        self.controller.evaluate(s, &grad, &self.f, &self.g, &mut self.buf);
        Ok(&self.buf.u)
    }

    /// `ṡ = f(s) + g(s)u(s)`.
    pub fn velocity(&mut self, s: &[T], out: &mut [T]) -> Result<()> {
        self.control(s)?;
        let m = self.buf.u.len();
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.f[i] + (0..m).map(|k| self.g[i * m + k] * self.buf.u[k]).sum::<T>();
        }
        Ok(())
    }

    /// Classical RK4 with the control recomputed at every stage.
    pub fn rk4_step(&mut self, s: &[T], dt: T) -> Result<Vec<T>> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidInput(format!("time step must be positive, got {dt}")));
        }
        let n = s.len();
        let half = dt * T::lit(0.5);
        let mut k1 = vec![T::zero(); n];
        let mut k2 = vec![T::zero(); n];
        let mut k3 = vec![T::zero(); n];
        let mut k4 = vec![T::zero(); n];
        let mut tmp = vec![T::zero(); n];
        self.velocity(s, &mut k1)?;
        axpy(s, half, &k1, &mut tmp);
        self.velocity(&tmp, &mut k2)?;
        axpy(s, half, &k2, &mut tmp);
        self.velocity(&tmp, &mut k3)?;
        axpy(s, dt, &k3, &mut tmp);
        self.velocity(&tmp, &mut k4)?;
        let sixth = dt / T::lit(6.0);
        let two = T::lit(2.0);
        let next: Vec<T> = (0..n).map(|i| s[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i])).collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("integration produced a non-finite state".into()));
        }
        Ok(next)
    }
}

fn axpy<T: Scalar>(x: &[T], a: T, y: &[T], out: &mut [T]) {
    for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + a * yi;
    }
}

/// One RK4 step of the closed loop.
pub fn rk4_step<T, S, L>(system: &S, controller: &Controller<T>, clf: &L, s: &[T], dt: T) -> Result<Vec<T>>
where
    T: Scalar,
    S: ControlAffine<T> + ?Sized,
    L: Lyapunov<T> + ?Sized,
{
    ClosedLoop::new(system, controller, clf)?.rk4_step(s, dt)
}

/// Rolls out from `s0` until the horizon, arrival at `s*`, or divergence.
pub fn simulate<T, S, L>(
    system: &S,
    controller: &Controller<T>,
    clf: &L,
    region: &Region<T>,
    s0: &[T],
    config: &SimConfig<T>,
) -> std::result::Result<Trajectory<T>, SimError<T>>
where
    T: Scalar,
    S: ControlAffine<T> + ?Sized,
    L: Lyapunov<T> + ?Sized,
{
    let (n, m) = (system.state_dim(), system.control_dim());
    if s0.len() != n {
        return Err(Error::Dimension { what: "initial state", expected: n, actual: s0.len() }.into());
    }
    if !region.contains(s0) {
        return Err(Error::InvalidInput("initial state lies outside the region".into()).into());
    }
    if !(config.horizon >= T::zero()) {
        return Err(Error::InvalidInput(format!("horizon must be non-negative, got {}", config.horizon)).into());
    }
    let mut cl = ClosedLoop::new(system, controller, clf)?;
    let outer = region.inflated(config.divergence_factor);
    let eq = clf.equilibrium().to_vec();
    let steps = (config.horizon / config.dt).round().to_f64_lossy().max(0.0) as usize;
    let mut traj = Trajectory::new(config.dt, n, m);
    let mut s = s0.to_vec();
    let mut e = vec![T::zero(); n];
    for step in 0..=steps {
        let u = cl.control(&s)?.to_vec();
        traj.states.extend_from_slice(&s);
        traj.controls.extend_from_slice(&u);
        traj.values.push(clf.value(&s)?);
        for (ei, (&a, &b)) in e.iter_mut().zip(s.iter().zip(&eq)) {
            *ei = a - b;
        }
        if norm2(&e) <= config.arrival_tol || step == steps {
            break;
        }
        match cl.rk4_step(&s, config.dt) {
            Ok(next) if outer.contains(&next) => s = next,
            Ok(_) | Err(Error::InvalidInput(_)) => return Err(SimError::Diverged { step: step + 1, partial: traj }),
            Err(other) => return Err(other.into()),
        }
    }
    Ok(traj)
}
