//! Counterexample-guided training of a neural CLF against a fixed controller law.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clf::{ClfCandidate, ClfForm, ClfWorkspace, Lyapunov};
use crate::controllers::{ControlBuffers, Controller};
use crate::diffcore::{Activation, FeatureNet};
use crate::dynamics::{ControlAffine, Region};
use crate::grid::Grid;
use crate::linalg::{norm2, Matrix};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::verify::{check_satisfiability, VerificationReport, VerifyConfig, EQUILIBRIUM_EXCLUSION};
use crate::{Error, Result};

/// Which risk drives the optimizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Hinge on `V̇ + b` plus the control-range penalty.
    Ours,
    /// The multi-term risk with separate positivity and equilibrium terms.
    Legacy,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ours => "ours",
            Self::Legacy => "legacy",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ours" => Ok(Self::Ours),
            "legacy" => Ok(Self::Legacy),
            other => Err(Error::Config(format!("unknown loss mode `{other}` (expected ours or legacy)"))),
        }
    }
}

/// Weights of the legacy risk.
#[derive(Clone, Debug, PartialEq)]
pub struct LegacyWeights<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
    pub c4: T,
    pub b1: T,
    pub b2: T,
}

impl<T: Scalar> Default for LegacyWeights<T> {
    fn default() -> Self {
        Self { c1: T::one(), c2: T::one(), c3: T::one(), c4: T::one(), b1: T::zero(), b2: T::zero() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig<T> {
    pub delta_learn: T,
    pub delta_verify: T,
    pub lambda1: T,
    pub lambda2: T,
    pub b: T,
    pub eta1: T,
    pub eta2: T,
    pub h: Matrix<T>,
    /// Constant per-sample weight `w(s)`.
    pub sample_weight: T,
    pub lr: T,
    /// Epochs between verifications.
    pub verify_period: usize,
    pub max_step: usize,
    pub seed: u64,
    pub loss_mode: LossMode,
    pub legacy: LegacyWeights<T>,
    /// Overlooked radius; only honoured in legacy mode.
    pub r0: T,
    pub shaping: bool,
    pub counterexample_cap: usize,
    /// Samples per batched evaluation pass.
    pub chunk: usize,
}

impl<T: Scalar> TrainConfig<T> {
    /// Inverted-pendulum learning settings.
    pub fn pendulum(n: usize) -> Self {
        Self {
            delta_learn: T::lit(2e-2),
            delta_verify: T::lit(2e-3),
            lambda1: T::one(),
            lambda2: T::one(),
            b: T::lit(0.1),
            eta1: T::one(),
            eta2: T::one(),
            h: Matrix::identity(n),
            sample_weight: T::one(),
            lr: T::lit(0.01),
            verify_period: 1,
            max_step: 2000,
            seed: 10,
            loss_mode: LossMode::Ours,
            legacy: LegacyWeights::default(),
            r0: T::zero(),
            shaping: true,
            counterexample_cap: 5000,
            chunk: 4096,
        }
    }

    /// Path-following learning settings.
    pub fn path_following(n: usize) -> Self {
        Self {
            delta_learn: T::lit(5e-3),
            delta_verify: T::lit(1e-3),
            eta1: T::lit(2.0),
            eta2: T::lit(0.2),
            verify_period: 2,
            ..Self::pendulum(n)
        }
    }

    /// Radius the verifier skips around `s*`.
    pub fn effective_r0(&self) -> T {
        match self.loss_mode {
            LossMode::Ours => T::zero(),
            LossMode::Legacy => self.r0,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let cfg = |msg: String| Err(Error::Config(msg));
        if !(self.lambda1 > T::zero()) || !(self.lambda2 > T::zero()) {
            return cfg(format!("lambda1 and lambda2 must be positive, got {} and {}", self.lambda1, self.lambda2));
        }
        if !(self.b >= T::zero()) {
            return cfg(format!("decrease margin b must be non-negative, got {}", self.b));
        }
        if !(self.delta_learn > T::zero()) || !(self.delta_verify > T::zero()) {
            return cfg("grid spacings must be positive".into());
        }
        if !(self.delta_verify < self.delta_learn) {
            return cfg(format!(
                "delta_verify ({}) must be finer than delta_learn ({})",
                self.delta_verify, self.delta_learn
            ));
        }
        if self.verify_period < 1 {
            return cfg("verify_period must be at least 1".into());
        }
        if !(self.lr > T::zero()) {
            return cfg(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.r0 >= T::zero()) {
            return cfg(format!("overlooked radius r0 must be non-negative, got {}", self.r0));
        }
        if !(self.eta1 >= T::zero()) || !(self.sample_weight > T::zero()) {
            return cfg("eta1 must be non-negative and the sample weight positive".into());
        }
        check_orthogonal(&self.h, n)
    }
}

/// `HᵀH = I` to 1e-12.
pub fn check_orthogonal<T: Scalar>(h: &Matrix<T>, n: usize) -> Result<()> {
    if h.shape() != (n, n) {
        return Err(Error::Config(format!("shaping matrix H must be {n}x{n}, got {:?}", h.shape())));
    }
    let hth = h.transpose().matmul(h)?;
    let err = hth.sub(&Matrix::identity(n))?.max_abs();
    if !(err <= T::lit(1e-12)) {
        return Err(Error::Config(format!("shaping matrix H is not orthogonal (max |HᵀH − I| = {err})")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleOrigin {
    Grid,
    Counterexample,
}

/// Training states, row-major `N×n`, with where each row came from.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch<T> {
    dim: usize,
    states: Vec<T>,
    origin: Vec<SampleOrigin>,
}

impl<T: Scalar> SampleBatch<T> {
    pub fn new(dim: usize, states: Vec<T>, origin: Vec<SampleOrigin>) -> Result<Self> {
        if dim == 0 || states.len() != dim * origin.len() {
            return Err(Error::Dimension { what: "sample batch", expected: dim * origin.len(), actual: states.len() });
        }
        Ok(Self { dim, states, origin })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.origin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origin.is_empty()
    }

    pub fn states(&self) -> &[T] {
        &self.states
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn origin(&self) -> &[SampleOrigin] {
        &self.origin
    }

    pub fn counterexample_count(&self) -> usize {
        self.origin.iter().filter(|&&o| o == SampleOrigin::Counterexample).count()
    }

    /// Drops every counterexample row and appends `fresh` ones.
    pub fn replace_counterexamples<'a>(&mut self, fresh: impl IntoIterator<Item = &'a [T]>) where T: 'a {
        let mut keep_states = Vec::with_capacity(self.states.len());
        let mut keep_origin = Vec::with_capacity(self.origin.len());
        for (i, &o) in self.origin.iter().enumerate() {
            if o == SampleOrigin::Grid {
                keep_states.extend_from_slice(&self.states[i * self.dim..(i + 1) * self.dim]);
                keep_origin.push(o);
            }
        }
        for s in fresh {
            debug_assert_eq!(s.len(), self.dim);
            keep_states.extend_from_slice(s);
            keep_origin.push(SampleOrigin::Counterexample);
        }
        self.states = keep_states;
        self.origin = keep_origin;
    }
}

/// Axis-aligned lattice over `region` with spacing `delta`, both ends included.
pub fn generate_grid_samples<T: Scalar>(region: &Region<T>, delta: T) -> Result<SampleBatch<T>> {
    let grid = Grid::new(region, delta)?;
    let origin = vec![SampleOrigin::Grid; grid.len()];
    SampleBatch::new(region.dim(), grid.points(), origin)
}

/// `(1/N) Σ λ₁ w max(V̇ + b, 0)²`.
pub fn lyapunov_risk<T: Scalar>(vdot: &[T], lambda1: T, b: T, w: T) -> T {
    if vdot.is_empty() {
        return T::zero();
    }
    let sum: T = vdot.iter().map(|&v| (v + b).max(T::zero()).powi(2)).sum();
    lambda1 * w * sum / T::from_usize_lossy(vdot.len())
}

/// `(1/N) Σ λ₂ w ‖u₁ − ū₁‖₂` from per-sample clipping residuals.
pub fn range_risk<T: Scalar>(residuals: &[T], lambda2: T, w: T) -> T {
    if residuals.is_empty() {
        return T::zero();
    }
    let sum: T = residuals.iter().copied().sum();
    lambda2 * w * sum / T::from_usize_lossy(residuals.len())
}

/// `(1/N) Σ η₁ (‖H(s − s*)‖² − η₂ V(s))²`.
pub fn shaping_loss<T: Scalar>(states: &[T], values: &[T], equilibrium: &[T], eta1: T, eta2: T, h: &Matrix<T>) -> Result<T> {
    let n = equilibrium.len();
    check_orthogonal(h, n)?;
    if states.len() != values.len() * n {
        return Err(Error::Dimension { what: "shaping batch", expected: values.len() * n, actual: states.len() });
    }
    if values.is_empty() {
        return Ok(T::zero());
    }
    let mut e = vec![T::zero(); n];
    let mut sum = T::zero();
    for (s, &v) in states.chunks_exact(n).zip(values) {
        let r = shaping_residual(h, s, equilibrium, v, eta2, &mut e);
        sum += r * r;
    }
    Ok(eta1 * sum / T::from_usize_lossy(values.len()))
}

fn shaping_residual<T: Scalar>(h: &Matrix<T>, s: &[T], eq: &[T], v: T, eta2: T, e: &mut [T]) -> T {
    for (ei, (&a, &b)) in e.iter_mut().zip(s.iter().zip(eq)) {
        *ei = a - b;
    }
    let n = e.len();
    let mut sq = T::zero();
    for i in 0..n {
        let hi: T = (0..n).map(|j| h[(i, j)] * e[j]).sum();
        sq += hi * hi;
    }
    sq - eta2 * v
}

/// `(1/N) Σ (C₁ max(V̇, b₁) + C₂ max(−V, b₂)) + C₃ V(s*)² + C₄ ‖∇V(s*)‖`.
pub fn legacy_risk<T: Scalar>(vdot: &[T], values: &[T], v_star: T, grad_star: &[T], w: &LegacyWeights<T>) -> T {
    let n = T::from_usize_lossy(vdot.len().max(1));
    let sum: T = vdot.iter().zip(values).map(|(&vd, &v)| w.c1 * vd.max(w.b1) + w.c2 * (-v).max(w.b2)).sum();
    sum / n + w.c3 * v_star * v_star + w.c4 * norm2(grad_star)
}

/// Loss values for one pass over a batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown<T> {
    /// Hinge risk, or the whole legacy risk in legacy mode.
    pub lyapunov: T,
    pub range: T,
    pub shaping: T,
    pub total: T,
    /// Batch points with `V̇ ≥ 0` outside the skipped ball.
    pub violations: usize,
}

/// Cached `f(s)` and `g(s)` for the batch rows; they do not depend on `θ`.
struct DynamicsCache<T> {
    f: Vec<T>,
    g: Vec<T>,
}

impl<T: Scalar> DynamicsCache<T> {
    fn build<S: ControlAffine<T> + ?Sized>(system: &S, batch: &SampleBatch<T>) -> Self {
        let (n, m) = (system.state_dim(), system.control_dim());
        let mut f = vec![T::zero(); batch.len() * n];
        let mut g = vec![T::zero(); batch.len() * n * m];
        for i in 0..batch.len() {
            system.drift_into(batch.state(i), &mut f[i * n..(i + 1) * n]);
            system.input_matrix_into(batch.state(i), &mut g[i * n * m..(i + 1) * n * m]);
        }
        Self { f, g }
    }
}

/// Everything needed to evaluate the training loss repeatedly.
pub struct LossProblem<'a, T, S: ?Sized> {
    pub system: &'a S,
    pub controller: &'a Controller<T>,
    pub config: &'a TrainConfig<T>,
    batch: SampleBatch<T>,
    cache: DynamicsCache<T>,
    ws: ClfWorkspace<T>,
    star_ws: ClfWorkspace<T>,
    buf: ControlBuffers<T>,
    value_bar: Vec<T>,
    grad_bar: Vec<T>,
}

impl<'a, T: Scalar, S: ControlAffine<T> + ?Sized> LossProblem<'a, T, S> {
    pub fn new(system: &'a S, controller: &'a Controller<T>, config: &'a TrainConfig<T>, batch: SampleBatch<T>) -> Result<Self> {
        let (n, m) = (system.state_dim(), system.control_dim());
        if batch.dim() != n {
            return Err(Error::Dimension { what: "training batch", expected: n, actual: batch.dim() });
        }
        if controller.control_dim() != m {
            return Err(Error::Dimension { what: "controller output", expected: m, actual: controller.control_dim() });
        }
        if batch.is_empty() {
            return Err(Error::InvalidInput("training batch is empty".into()));
        }
        let cache = DynamicsCache::build(system, &batch);
        Ok(Self {
            system,
            controller,
            config,
            batch,
            cache,
            ws: ClfWorkspace::new(),
            star_ws: ClfWorkspace::new(),
            buf: ControlBuffers::new(m),
            value_bar: Vec::new(),
            grad_bar: Vec::new(),
        })
    }

    pub fn batch(&self) -> &SampleBatch<T> {
        &self.batch
    }

    pub fn replace_counterexamples(&mut self, report: &VerificationReport<T>) {
        self.batch.replace_counterexamples(report.violations.iter().map(|v| v.state.as_slice()));
        self.cache = DynamicsCache::build(self.system, &self.batch);
    }

    /// Loss at the current parameters; the gradient is added into `grad` when given.
    pub fn evaluate(&mut self, clf: &ClfCandidate<T>, mut grad: Option<&mut [T]>) -> Result<LossBreakdown<T>> {
        let cfg = self.config;
        let (n, m) = (self.system.state_dim(), self.system.control_dim());
        let total_n = self.batch.len();
        let inv_n = T::one() / T::from_usize_lossy(total_n);
        let w = cfg.sample_weight;
        let eq = clf.equilibrium().to_vec();
        let skip = cfg.effective_r0().max(cfg.delta_verify * T::lit(EQUILIBRIUM_EXCLUSION));
        let legacy = cfg.loss_mode == LossMode::Legacy;
        let shaping = cfg.shaping && cfg.eta1 > T::zero();
        let (mut lya, mut range, mut shape) = (T::zero(), T::zero(), T::zero());
        let mut violations = 0;
        let mut e = vec![T::zero(); n];
        let chunk = cfg.chunk.max(1);
        let mut start = 0;
        while start < total_n {
            let end = (start + chunk).min(total_n);
            let rows = end - start;
            clf.evaluate_batch(&self.batch.states[start * n..end * n], &mut self.ws)?;
            self.value_bar.clear();
            self.value_bar.resize(rows, T::zero());
            self.grad_bar.clear();
            self.grad_bar.resize(rows * n, T::zero());
            for b in 0..rows {
                let i = start + b;
                let s = self.batch.state(i);
                let f = &self.cache.f[i * n..(i + 1) * n];
                let g = &self.cache.g[i * n * m..(i + 1) * n * m];
                let gv = &self.ws.grads[b * n..(b + 1) * n];
                let v = self.ws.values[b];
                let ev = self.controller.evaluate(s, gv, f, g, &mut self.buf);
                for (ei, (&a, &c)) in e.iter_mut().zip(s.iter().zip(&eq)) {
                    *ei = a - c;
                }
                if !(ev.vdot < T::zero()) && !(norm2(&e) < skip) {
                    violations += 1;
                }
                let (vdot_bar, range_bar);
                if legacy {
                    let lw = &cfg.legacy;
                    lya += lw.c1 * ev.vdot.max(lw.b1) + lw.c2 * (-v).max(lw.b2);
                    vdot_bar = if ev.vdot > lw.b1 { lw.c1 * inv_n } else { T::zero() };
                    if -v > lw.b2 {
                        self.value_bar[b] -= lw.c2 * inv_n;
                    }
                } else {
                    let hinge = (ev.vdot + cfg.b).max(T::zero());
                    lya += hinge * hinge;
                    vdot_bar = T::lit(2.0) * cfg.lambda1 * w * hinge * inv_n;
                }
                range += ev.range;
                range_bar = cfg.lambda2 * w * inv_n;
                if shaping {
                    let r = shaping_residual(&cfg.h, s, &eq, v, cfg.eta2, &mut e);
                    shape += r * r;
                    self.value_bar[b] -= T::lit(2.0) * cfg.eta1 * cfg.eta2 * r * inv_n;
                }
                if grad.is_some() {
                    self.controller.vjp(gv, f, g, &self.buf, vdot_bar, range_bar, &mut self.grad_bar[b * n..(b + 1) * n]);
                }
            }
            if let Some(pg) = grad.as_deref_mut() {
                clf.pullback_batch(&mut self.ws, &self.value_bar, &self.grad_bar, pg);
            }
            start = end;
        }
        let lya = if legacy { lya * inv_n } else { cfg.lambda1 * w * lya * inv_n };
        let range = cfg.lambda2 * w * range * inv_n;
        let shape = if shaping { cfg.eta1 * shape * inv_n } else { T::zero() };
        let mut star_terms = T::zero();
        if legacy {
            let lw = &cfg.legacy;
            clf.evaluate_batch(&eq, &mut self.star_ws)?;
            let v_star = self.star_ws.values[0];
            let g_star = self.star_ws.grads.clone();
            let g_norm = norm2(&g_star);
            star_terms = lw.c3 * v_star * v_star + lw.c4 * g_norm;
            if let Some(pg) = grad.as_deref_mut() {
                let vb = [T::lit(2.0) * lw.c3 * v_star];
                let gb: Vec<T> = if g_norm > T::zero() {
                    g_star.iter().map(|&x| lw.c4 * x / g_norm).collect()
                } else {
                    vec![T::zero(); n]
                };
                clf.pullback_batch(&mut self.star_ws, &vb, &gb, pg);
            }
        }
        let lyapunov = lya + star_terms;
        Ok(LossBreakdown { lyapunov, range, shaping: shape, total: lyapunov + range + shape, violations })
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow<T> {
    /// Optimizer steps taken before this evaluation.
    pub epoch: usize,
    pub lyapunov: T,
    pub range: T,
    pub shaping: T,
    /// Dense-grid violation count when a verification ran this epoch.
    pub violations: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub clf: ClfCandidate<T>,
    pub history: Vec<HistoryRow<T>>,
    /// The verifier reported no violations.
    pub success: bool,
    /// Most recent dense verification, if one ran.
    pub report: Option<VerificationReport<T>>,
    pub steps: usize,
}

fn verify_config<T: Scalar>(config: &TrainConfig<T>) -> VerifyConfig<T> {
    VerifyConfig::new(config.delta_verify)
        .with_r0(config.effective_r0())
        .with_max_recorded(config.counterexample_cap)
}

/// Trains `clf` until the dense verifier is clean or `max_step` runs out.
///
/// Verification is skipped on scheduled epochs where the training batch still
/// has violations, since the dense grid would then fail as well.
pub fn train<T, S>(system: &S, clf: ClfCandidate<T>, controller: &Controller<T>, config: &TrainConfig<T>, region: &Region<T>) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    S: ControlAffine<T> + ?Sized,
{
    let n = system.state_dim();
    config.validate(n)?;
    if clf.dim() != n {
        return Err(Error::Dimension { what: "CLF input", expected: n, actual: clf.dim() });
    }
    if region.dim() != n {
        return Err(Error::Dimension { what: "training region", expected: n, actual: region.dim() });
    }
    let mut clf = clf;
    if config.max_step == 0 {
        return Ok(TrainOutcome { clf, history: Vec::new(), success: false, report: None, steps: 0 });
    }
    let batch = generate_grid_samples(region, config.delta_learn)?;
    let mut problem = LossProblem::new(system, controller, config, batch)?;
    let mut adam = Adam::new(config.lr, clf.num_params());
    let mut grad = vec![T::zero(); clf.num_params()];
    let mut history = Vec::new();
    let mut report = None;
    let vcfg = verify_config(config);
    let mut epoch = 0;
    loop {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let loss = problem.evaluate(&clf, Some(&mut grad))?;
        if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss {
                epoch,
                lyapunov: loss.lyapunov.to_f64_lossy(),
                range: loss.range.to_f64_lossy(),
                shaping: loss.shaping.to_f64_lossy(),
            });
        }
        let mut row = HistoryRow { epoch, lyapunov: loss.lyapunov, range: loss.range, shaping: loss.shaping, violations: None };
        if epoch > 0 && epoch % config.verify_period == 0 && loss.violations == 0 {
            let rep = check_satisfiability(&clf, controller, system, region, &vcfg)?;
            row.violations = Some(rep.violation_count);
            let clean = rep.satisfiable;
            problem.replace_counterexamples(&rep);
            report = Some(rep);
            if clean {
                history.push(row);
                return Ok(TrainOutcome { clf, history, success: true, report, steps: epoch });
            }
        }
        history.push(row);
        if epoch == config.max_step {
            break;
        }
        adam.step(clf.params_mut(), &grad);
        epoch += 1;
    }
    Ok(TrainOutcome { clf, history, success: false, report, steps: epoch })
}

/// Layer layout of a CLF network.
#[derive(Clone, Debug, PartialEq)]
pub struct NetShape {
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Default for NetShape {
    fn default() -> Self {
        Self { hidden: vec![16, 16], output: 8, activation: Activation::Tanh }
    }
}

/// A freshly initialized candidate, deterministic in `seed`.
pub fn initial_candidate<T: Scalar>(
    equilibrium: Vec<T>,
    shape: &NetShape,
    k: T,
    form: ClfForm,
    seed: u64,
) -> Result<ClfCandidate<T>> {
    let n = equilibrium.len();
    let output = if form == ClfForm::Plain { 1 } else { shape.output };
    let widths = FeatureNet::<T>::mlp_widths(n, &shape.hidden, output);
    let acts = FeatureNet::<T>::mlp_activations(shape.hidden.len(), shape.activation, Activation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = FeatureNet::init_uniform(widths, acts, &mut rng)?;
    ClfCandidate::new(net, k, equilibrium, form)
}
