//! Feedback laws: the bounded CLF controller, LQR and tanh-saturated LQR,
//! and the Lyapunov derivative `V̇ = ∇Vᵀ(f + g u)`.

use crate::linalg::Matrix;
use crate::scalar::{fast_tanh, Scalar};
use crate::{Error, Result};

/// Default threshold on `‖gᵀ∇V‖²` below which the CLF controller falls back to `u*`.
pub const SINGULAR_THRESHOLD: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct ClfControllerParams<T> {
    q1: Vec<T>,
    q2: Vec<T>,
    u_min: Vec<T>,
    u_max: Vec<T>,
    u_eq: Vec<T>,
    eps_sing: T,
    feedforward: bool,
}

impl<T: Scalar> ClfControllerParams<T> {
    pub fn new(q1: Vec<T>, q2: Vec<T>, u_min: Vec<T>, u_max: Vec<T>, u_eq: Vec<T>) -> Result<Self> {
        let m = u_min.len();
        for (what, v) in [("q1", &q1), ("q2", &q2), ("u_max", &u_max), ("u_eq", &u_eq)] {
            if v.len() != m {
                return Err(Error::Config(format!("controller `{what}` has {} entries, expected {m}", v.len())));
            }
        }
        for i in 0..m {
            if !(q1[i] > T::zero() && q2[i] > T::zero()) {
                return Err(Error::Config(format!("q1 and q2 must be positive, got q1 = {}, q2 = {}", q1[i], q2[i])));
            }
            let half = (u_max[i] - u_min[i]) * T::lit(0.5);
            if !(q1[i] < half) {
                return Err(Error::Config(format!(
                    "q1 = {} leaves an empty clip interval; need q1 < (u_max - u_min)/2 = {half}",
                    q1[i]
                )));
            }
        }
        Ok(Self { q1, q2, u_min, u_max, u_eq, eps_sing: T::lit(SINGULAR_THRESHOLD), feedforward: false })
    }

    /// Uniform `q₁`, `q₂` across control channels.
    pub fn uniform(q1: T, q2: T, u_min: Vec<T>, u_max: Vec<T>, u_eq: Vec<T>) -> Result<Self> {
        let m = u_min.len();
        Self::new(vec![q1; m], vec![q2; m], u_min, u_max, u_eq)
    }

    /// Adds `u*` explicitly: the law is applied to the shifted drift `f + g u*`
    /// and the clip interval is shifted by `−u*`.
    pub fn with_feedforward(mut self, on: bool) -> Result<Self> {
        if on {
            for i in 0..self.u_eq.len() {
                let (lo, hi) = (self.u_min[i] + self.q1[i] - self.u_eq[i], self.u_max[i] - self.q1[i] - self.u_eq[i]);
                if !(lo < hi) {
                    return Err(Error::Config("u* leaves no room for the feedforward clip interval".into()));
                }
            }
        }
        self.feedforward = on;
        Ok(self)
    }

    pub fn with_singular_threshold(mut self, eps: T) -> Self {
        self.eps_sing = eps;
        self
    }

    pub fn control_dim(&self) -> usize {
        self.u_min.len()
    }

    pub fn q1(&self) -> &[T] {
        &self.q1
    }

    pub fn q2(&self) -> &[T] {
        &self.q2
    }

    pub fn u_min(&self) -> &[T] {
        &self.u_min
    }

    pub fn u_max(&self) -> &[T] {
        &self.u_max
    }

    pub fn u_eq(&self) -> &[T] {
        &self.u_eq
    }

    pub fn singular_threshold(&self) -> T {
        self.eps_sing
    }

    pub fn feedforward(&self) -> bool {
        self.feedforward
    }

    /// `(u₁,min, u₁,max)` for channel `i`, in the coordinates `u₁` lives in.
    pub fn u1_bounds(&self, i: usize) -> (T, T) {
        let shift = if self.feedforward { self.u_eq[i] } else { T::zero() };
        (self.u_min[i] + self.q1[i] - shift, self.u_max[i] - self.q1[i] - shift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LqrControllerParams<T> {
    /// Feedback matrix `K_fb` (`m×n`) with `u = K_fb(s − s*) + u*`.
    feedback: Matrix<T>,
    equilibrium: Vec<T>,
    u_eq: Vec<T>,
    amplitude: Vec<T>,
}

impl<T: Scalar> LqrControllerParams<T> {
    /// `feedback` is applied as printed: `u = K(s − s*) + u*`.
    pub fn new(feedback: Matrix<T>, equilibrium: Vec<T>, u_eq: Vec<T>) -> Result<Self> {
        if feedback.cols() != equilibrium.len() || feedback.rows() != u_eq.len() {
            return Err(Error::Dimension { what: "LQR feedback shape", expected: u_eq.len() * equilibrium.len(), actual: feedback.rows() * feedback.cols() });
        }
        let m = u_eq.len();
        Ok(Self { feedback, equilibrium, u_eq, amplitude: vec![T::zero(); m] })
    }

    /// From a Riccati gain `K = R⁻¹BᵀP`; the stabilizing feedback is `−K`.
    pub fn from_riccati_gain(gain: &Matrix<T>, equilibrium: Vec<T>, u_eq: Vec<T>) -> Result<Self> {
        Self::new(gain.scale(-T::one()), equilibrium, u_eq)
    }

    pub fn with_amplitude(mut self, amplitude: Vec<T>) -> Result<Self> {
        if amplitude.len() != self.u_eq.len() || amplitude.iter().any(|&a| !(a > T::zero())) {
            return Err(Error::Config("tanh-LQR amplitude must be positive per control channel".into()));
        }
        self.amplitude = amplitude;
        Ok(self)
    }

    pub fn feedback(&self) -> &Matrix<T> {
        &self.feedback
    }

    pub fn amplitude(&self) -> &[T] {
        &self.amplitude
    }

    pub fn equilibrium(&self) -> &[T] {
        &self.equilibrium
    }

    pub fn u_eq(&self) -> &[T] {
        &self.u_eq
    }

    fn linear_part(&self, s: &[T], out: &mut [T]) {
        let n = self.equilibrium.len();
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.feedback.row(i);
            let mut acc = T::zero();
            for j in 0..n {
                acc += row[j] * (s[j] - self.equilibrium[j]);
            }
            *o = acc;
        }
    }
}

/// Output of [`clf_control`].
#[derive(Clone, Debug, PartialEq)]
pub struct ClfControl<T> {
    pub u: Vec<T>,
    pub u1_raw: Vec<T>,
    pub u1_clipped: Vec<T>,
    pub singular: bool,
}

/// Bounded CLF controller `u = clip(u₁) + u₂` with
/// `u₁ = −(∇Vᵀf)·w/‖w‖²`, `u₂ = −q₁·tanh(q₂·w)`, `w = gᵀ∇V`.
///
/// `g` is `n×m` row-major.
pub fn clf_control<T: Scalar>(params: &ClfControllerParams<T>, grad_v: &[T], f: &[T], g: &[T]) -> ClfControl<T> {
    let mut buf = ControlBuffers::new(params.control_dim());
    let singular = clf_control_into(params, grad_v, f, g, &mut buf);
    ClfControl { u: buf.u, u1_raw: buf.u1, u1_clipped: buf.u1c, singular }
}

/// Per-sample scratch for controller evaluation.
#[derive(Clone, Debug, Default)]
pub struct ControlBuffers<T> {
    pub w: Vec<T>,
    pub u1: Vec<T>,
    pub u1c: Vec<T>,
    pub u: Vec<T>,
    a: T,
    w_sq: T,
}

impl<T: Scalar> ControlBuffers<T> {
    pub fn new(m: usize) -> Self {
        Self { w: vec![T::zero(); m], u1: vec![T::zero(); m], u1c: vec![T::zero(); m], u: vec![T::zero(); m], a: T::zero(), w_sq: T::zero() }
    }

    fn ensure(&mut self, m: usize) {
        if self.u.len() != m {
            *self = Self::new(m);
        }
    }
}

/// `∇Vᵀ(f + g u*)` when feedforward is on, `∇Vᵀf` otherwise.
fn shifted_drift_power<T: Scalar>(params: &ClfControllerParams<T>, grad_v: &[T], f: &[T], w: &[T]) -> T {
    let mut a: T = grad_v.iter().zip(f).map(|(&x, &y)| x * y).sum();
    if params.feedforward {
        a += w.iter().zip(&params.u_eq).map(|(&x, &y)| x * y).sum::<T>();
    }
    a
}

fn clf_control_into<T: Scalar>(params: &ClfControllerParams<T>, grad_v: &[T], f: &[T], g: &[T], buf: &mut ControlBuffers<T>) -> bool {
    let m = params.control_dim();
    buf.ensure(m);
    for k in 0..m {
        buf.w[k] = grad_v.iter().enumerate().map(|(i, &dv)| g[i * m + k] * dv).sum();
    }
    let w_sq: T = buf.w.iter().map(|&x| x * x).sum();
    buf.w_sq = w_sq;
    if w_sq <= params.eps_sing {
        buf.u.copy_from_slice(&params.u_eq);
        buf.u1.copy_from_slice(&params.u_eq);
        buf.u1c.copy_from_slice(&params.u_eq);
        buf.a = T::zero();
        return true;
    }
    let a = shifted_drift_power(params, grad_v, f, &buf.w);
    buf.a = a;
    let shift = if params.feedforward { T::one() } else { T::zero() };
    for k in 0..m {
        let u1 = -a * buf.w[k] / w_sq;
        let (lo, hi) = params.u1_bounds(k);
        let u1c = u1.max(lo).min(hi);
        let u2 = -params.q1[k] * fast_tanh(params.q2[k] * buf.w[k]);
        buf.u1[k] = u1;
        buf.u1c[k] = u1c;
        buf.u[k] = u1c + u2 + shift * params.u_eq[k];
    }
    false
}

/// `∇Vᵀ(f + g u)`.
pub fn vdot<T: Scalar>(grad_v: &[T], f: &[T], g: &[T], u: &[T]) -> T {
    let m = u.len();
    grad_v
        .iter()
        .enumerate()
        .map(|(i, &dv)| {
            let gu: T = (0..m).map(|k| g[i * m + k] * u[k]).sum();
            dv * (f[i] + gu)
        })
        .sum()
}

/// `u = K(s − s*) + u*`.
pub fn lqr_control<T: Scalar>(params: &LqrControllerParams<T>, s: &[T]) -> Vec<T> {
    let mut u = vec![T::zero(); params.u_eq.len()];
    params.linear_part(s, &mut u);
    u.iter_mut().zip(&params.u_eq).for_each(|(x, &e)| *x += e);
    u
}

/// `u = u_amp·tanh(K(s − s*)) + u*`.
pub fn tanh_lqr_control<T: Scalar>(params: &LqrControllerParams<T>, s: &[T]) -> Vec<T> {
    let mut u = vec![T::zero(); params.u_eq.len()];
    params.linear_part(s, &mut u);
    for (k, x) in u.iter_mut().enumerate() {
        *x = params.amplitude[k] * x.tanh() + params.u_eq[k];
    }
    u
}

/// A feedback law of any supported kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Controller<T> {
    Clf(ClfControllerParams<T>),
    Lqr(LqrControllerParams<T>),
    TanhLqr(LqrControllerParams<T>),
}

/// What the training losses need from one controller evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlEval<T> {
    pub vdot: T,
    /// `‖u₁ − ū₁‖₂`; zero for the LQR laws.
    pub range: T,
    pub singular: bool,
}

impl<T: Scalar> Controller<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Clf(_) => "clf",
            Self::Lqr(_) => "lqr",
            Self::TanhLqr(_) => "tanh_lqr",
        }
    }

    pub fn control_dim(&self) -> usize {
        match self {
            Self::Clf(p) => p.control_dim(),
            Self::Lqr(p) | Self::TanhLqr(p) => p.u_eq.len(),
        }
    }

    /// Whether `u` depends on `∇V`.
    pub fn uses_gradient(&self) -> bool {
        matches!(self, Self::Clf(_))
    }

    /// Evaluates `u` into `buf.u` and returns `V̇` and the range residual.
    pub fn evaluate(&self, s: &[T], grad_v: &[T], f: &[T], g: &[T], buf: &mut ControlBuffers<T>) -> ControlEval<T> {
        buf.ensure(self.control_dim());
        let (singular, range) = match self {
            Self::Clf(p) => {
                let singular = clf_control_into(p, grad_v, f, g, buf);
                let range = buf.u1.iter().zip(&buf.u1c).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>().sqrt();
                (singular, range)
            }
            Self::Lqr(p) => {
                let u = lqr_control(p, s);
                buf.u.copy_from_slice(&u);
                (false, T::zero())
            }
            Self::TanhLqr(p) => {
                let u = tanh_lqr_control(p, s);
                buf.u.copy_from_slice(&u);
                (false, T::zero())
            }
        };
        ControlEval { vdot: vdot(grad_v, f, g, &buf.u), range, singular }
    }

    /// Adjoint of `(V̇, range)` with respect to `∇V`, added into `grad_bar`.
    ///
    /// Must follow [`evaluate`](Self::evaluate) on the same inputs and buffers.
    #[allow(clippy::too_many_arguments)]
    pub fn vjp(&self, grad_v: &[T], f: &[T], g: &[T], buf: &ControlBuffers<T>, vdot_bar: T, range_bar: T, grad_bar: &mut [T]) {
        let n = grad_v.len();
        let m = self.control_dim();
        // ∂V̇/∂∇V holding u fixed is f + g u.
        let mut a_bar = vdot_bar;
        let mut w_bar: Vec<T> = buf.u.iter().map(|&u| vdot_bar * u).collect();
        if let Self::Clf(p) = self {
            if !buf.w_sq.is_zero() && buf.w_sq > p.eps_sing {
                // u = ū₁ + u₂ (+ u*): differentiate through u₁ and u₂.
                let w_sq = buf.w_sq;
                let a = buf.a;
                let diff_norm = buf.u1.iter().zip(&buf.u1c).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt();
                // Adjoint of raw u₁ per channel.
                let mut u1_bar = vec![T::zero(); m];
                for k in 0..m {
                    let clipped = buf.u1[k] != buf.u1c[k];
                    if !clipped {
                        u1_bar[k] += vdot_bar * buf.w[k];
                    } else if diff_norm > T::zero() {
                        u1_bar[k] += range_bar * (buf.u1[k] - buf.u1c[k]) / diff_norm;
                    }
                    let t = fast_tanh(p.q2[k] * buf.w[k]);
                    // ∂u₂/∂w = −q₁q₂(1 − tanh²).
                    w_bar[k] += vdot_bar * buf.w[k] * (-p.q1[k] * p.q2[k] * (T::one() - t * t));
                }
                // u₁ = −a w / ‖w‖².
                let mut dot = T::zero();
                let mut a_adj = T::zero();
                for k in 0..m {
                    a_adj += -u1_bar[k] * buf.w[k] / w_sq;
                    dot += u1_bar[k] * buf.w[k];
                }
                a_bar += a_adj;
                for k in 0..m {
                    w_bar[k] += -a * u1_bar[k] / w_sq + (a + a) * dot * buf.w[k] / (w_sq * w_sq);
                }
                if p.feedforward {
                    // a includes wᵀu*.
                    for k in 0..m {
                        w_bar[k] += a_adj * p.u_eq[k];
                    }
                }
            }
        }
        for i in 0..n {
            let mut acc = a_bar * f[i];
            for k in 0..m {
                acc += g[i * m + k] * w_bar[k];
            }
            grad_bar[i] += acc;
        }
    }
}
