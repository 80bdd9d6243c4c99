//! Lyapunov function candidates: the sum-of-squares neural CLF, a plain
//! scalar-output network, and the quadratic form from a Riccati solution.

mod quadratic;
pub mod riccati;

pub use quadratic::QuadraticClf;

use crate::diffcore::{FeatureNet, TangentWorkspace};
use crate::scalar::Scalar;
use crate::{Error, Result};

/// How the network output becomes `V`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClfForm {
    /// `V = ‖φ(s) − φ(s*)‖² + k·log(1 + (Σᵢ(sᵢ − sᵢ*))²)`.
    SumOfSquares,
    /// `V = φ(s)` for a scalar-output net; no structural positivity.
    Plain,
}

impl ClfForm {
    pub fn name(self) -> &'static str {
        match self {
            Self::SumOfSquares => "sos",
            Self::Plain => "plain",
        }
    }
}

impl std::str::FromStr for ClfForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sos" => Ok(Self::SumOfSquares),
            "plain" => Ok(Self::Plain),
            other => Err(Error::Config(format!("unknown CLF form `{other}` (expected sos or plain)"))),
        }
    }
}

/// Anything that yields `V` and `∇V` at a state.
pub trait Lyapunov<T: Scalar> {
    fn dim(&self) -> usize;
    fn equilibrium(&self) -> &[T];
    fn value(&self, s: &[T]) -> Result<T>;
    fn gradient(&self, s: &[T]) -> Result<Vec<T>>;

    /// Row-major `B×n` states in; `V` lands in `ws.values`, `∇V` (`B×n`) in `ws.grads`.
    fn evaluate_batch_into(&self, states: &[T], ws: &mut ClfWorkspace<T>) -> Result<()> {
        let n = self.dim();
        ws.values.clear();
        ws.grads.clear();
        for s in states.chunks_exact(n) {
            ws.values.push(self.value(s)?);
            ws.grads.extend(self.gradient(s)?);
        }
        ws.batch = ws.values.len();
        Ok(())
    }
}

/// Neural CLF candidate built on a feature network.
#[derive(Clone, Debug, PartialEq)]
pub struct ClfCandidate<T> {
    net: FeatureNet<T>,
    k: T,
    equilibrium: Vec<T>,
    form: ClfForm,
}

/// `k·log(1 + σ²)` and its derivative in `σ`.
#[inline]
fn augmentation<T: Scalar>(k: T, sigma: T) -> (T, T) {
    let sq = sigma * sigma;
    (k * sq.ln_1p(), k * (sigma + sigma) / (T::one() + sq))
}

impl<T: Scalar> ClfCandidate<T> {
    pub fn new(net: FeatureNet<T>, k: T, equilibrium: Vec<T>, form: ClfForm) -> Result<Self> {
        if equilibrium.len() != net.input_dim() {
            return Err(Error::Dimension { what: "equilibrium state", expected: net.input_dim(), actual: equilibrium.len() });
        }
        match form {
            ClfForm::SumOfSquares if !(k > T::zero() && k.is_finite()) => {
                return Err(Error::Config(format!("augmentation weight k must be positive, got {k}")));
            }
            ClfForm::Plain if net.output_dim() != 1 => {
                return Err(Error::Dimension { what: "plain CLF output width", expected: 1, actual: net.output_dim() });
            }
            _ => {}
        }
        Ok(Self { net, k, equilibrium, form })
    }

    pub fn net(&self) -> &FeatureNet<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FeatureNet<T> {
        &mut self.net
    }

    pub fn k(&self) -> T {
        self.k
    }

    pub fn form(&self) -> ClfForm {
        self.form
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn params(&self) -> &[T] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        self.net.params_mut()
    }

    fn sigma(&self, s: &[T]) -> T {
        s.iter().zip(&self.equilibrium).map(|(&a, &b)| a - b).sum()
    }

    /// The two summands `(V₁, V₂)` of the SOS form, evaluated separately.
    pub fn sos_terms(&self, s: &[T]) -> Result<(T, T)> {
        let phi = self.net.forward(s)?;
        let phi_star = self.net.forward(&self.equilibrium)?;
        let v1 = phi.iter().zip(&phi_star).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let (v2, _) = augmentation(self.k, self.sigma(s));
        Ok((v1, v2))
    }

    /// Batched `V` and `∇V`; results land in the workspace.
    pub fn evaluate_batch(&self, states: &[T], ws: &mut ClfWorkspace<T>) -> Result<()> {
        let n = self.dim();
        if states.len() % n != 0 {
            return Err(Error::Dimension { what: "batched state buffer", expected: n, actual: states.len() % n });
        }
        let batch = states.len() / n;
        ws.batch = batch;
        ws.values.clear();
        ws.grads.clear();
        ws.values.resize(batch, T::zero());
        ws.grads.resize(batch * n, T::zero());
        match self.form {
            ClfForm::Plain => {
                self.net.forward_batch(states, true, &mut ws.net);
                for b in 0..batch {
                    ws.values[b] = ws.net.value(0, b);
                    for j in 0..n {
                        ws.grads[b * n + j] = ws.net.tangent(0, j, b);
                    }
                }
            }
            ClfForm::SumOfSquares => {
                // s* rides along as the final column so φ(s*) shares the pass.
                ws.states.clear();
                ws.states.extend_from_slice(states);
                ws.states.extend_from_slice(&self.equilibrium);
                self.net.forward_batch(&ws.states, true, &mut ws.net);
                let l = self.net.output_dim();
                for b in 0..batch {
                    let s = &states[b * n..(b + 1) * n];
                    let (v2, dv2) = augmentation(self.k, self.sigma(s));
                    let mut v1 = T::zero();
                    let g = &mut ws.grads[b * n..(b + 1) * n];
                    g.iter_mut().for_each(|x| *x = dv2);
                    for r in 0..l {
                        let d = ws.net.value(r, b) - ws.net.value(r, batch);
                        v1 += d * d;
                        let d2 = d + d;
                        for (j, gj) in g.iter_mut().enumerate() {
                            *gj += d2 * ws.net.tangent(r, j, b);
                        }
                    }
                    ws.values[b] = v1 + v2;
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep after [`evaluate_batch`](Self::evaluate_batch): adds
    /// `Σ_b v̄_b ∂V_b/∂θ + ḡ_b · ∂∇V_b/∂θ` into `param_grad`.
    pub fn pullback_batch(&self, ws: &mut ClfWorkspace<T>, value_bar: &[T], grad_bar: &[T], param_grad: &mut [T]) {
        let n = self.dim();
        let batch = ws.batch;
        assert_eq!(value_bar.len(), batch, "value adjoint length");
        assert_eq!(grad_bar.len(), batch * n, "gradient adjoint length");
        let l = self.net.output_dim();
        let net_batch = ws.net.batch();
        let cols = net_batch * (1 + n);
        ws.out_bar.clear();
        ws.out_bar.resize(l * cols, T::zero());
        let out_bar = &mut ws.out_bar;
        match self.form {
            ClfForm::Plain => {
                for b in 0..batch {
                    out_bar[b] = value_bar[b];
                    for j in 0..n {
                        out_bar[(1 + j) * net_batch + b] = grad_bar[b * n + j];
                    }
                }
            }
            ClfForm::SumOfSquares => {
                for r in 0..l {
                    let star = ws.net.value(r, batch);
                    let mut star_bar = T::zero();
                    for b in 0..batch {
                        let d = ws.net.value(r, b) - star;
                        let gb = &grad_bar[b * n..(b + 1) * n];
                        let mut d_bar = (d + d) * value_bar[b];
                        for j in 0..n {
                            let t = ws.net.tangent(r, j, b);
                            d_bar += (t + t) * gb[j];
                            out_bar[r * cols + (1 + j) * net_batch + b] = (d + d) * gb[j];
                        }
                        out_bar[r * cols + b] = d_bar;
                        star_bar -= d_bar;
                    }
                    out_bar[r * cols + batch] = star_bar;
                }
            }
        }
        let out_bar = std::mem::take(&mut ws.out_bar);
        self.net.pullback_batch(&mut ws.net, &out_bar, param_grad);
        ws.out_bar = out_bar;
    }
}

impl<T: Scalar> Lyapunov<T> for ClfCandidate<T> {
    fn dim(&self) -> usize {
        self.net.input_dim()
    }

    fn equilibrium(&self) -> &[T] {
        &self.equilibrium
    }

    fn value(&self, s: &[T]) -> Result<T> {
        match self.form {
            ClfForm::Plain => Ok(self.net.forward(s)?[0]),
            ClfForm::SumOfSquares => {
                let (v1, v2) = self.sos_terms(s)?;
                Ok(v1 + v2)
            }
        }
    }

    fn gradient(&self, s: &[T]) -> Result<Vec<T>> {
        let jac = self.net.input_jacobian(s)?;
        let n = self.dim();
        match self.form {
            ClfForm::Plain => Ok(jac.row(0).to_vec()),
            ClfForm::SumOfSquares => {
                let phi = self.net.forward(s)?;
                let phi_star = self.net.forward(&self.equilibrium)?;
                let (_, dv2) = augmentation(self.k, self.sigma(s));
                let mut g = vec![dv2; n];
                for (r, (&a, &b)) in phi.iter().zip(&phi_star).enumerate() {
                    let d2 = (a - b) + (a - b);
                    for (j, gj) in g.iter_mut().enumerate() {
                        *gj += d2 * jac[(r, j)];
                    }
                }
                Ok(g)
            }
        }
    }

    fn evaluate_batch_into(&self, states: &[T], ws: &mut ClfWorkspace<T>) -> Result<()> {
        self.evaluate_batch(states, ws)
    }
}

/// Buffers for batched CLF evaluation.
#[derive(Clone, Debug, Default)]
pub struct ClfWorkspace<T> {
    net: TangentWorkspace<T>,
    states: Vec<T>,
    out_bar: Vec<T>,
    batch: usize,
    /// `V` per sample.
    pub values: Vec<T>,
    /// `∇V`, row-major `B×n`.
    pub grads: Vec<T>,
}

impl<T: Scalar> ClfWorkspace<T> {
    pub fn new() -> Self {
        Self {
            net: TangentWorkspace::new(),
            states: Vec::new(),
            out_bar: Vec::new(),
            batch: 0,
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}
