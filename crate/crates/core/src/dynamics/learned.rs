use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ControlAffine, SystemSpec};
use crate::diffcore::{Activation, FeatureNet, TangentWorkspace};
use crate::grid::Grid;
use crate::linalg::{norm2, Matrix};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// One regression target `(s, u, ṡ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicsSample<T> {
    pub state: Vec<T>,
    pub control: Vec<T>,
    pub velocity: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainConfig<T> {
    /// Hidden widths of both regressors; empty means purely affine.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub epochs: usize,
    pub lr: T,
    pub seed: u64,
    /// Share of samples withheld to measure the fit error.
    pub holdout_fraction: f64,
    /// Finish with an exact least-squares fit of both output layers.
    pub refit_output: bool,
}

impl<T: Scalar> Default for PretrainConfig<T> {
    fn default() -> Self {
        Self {
            hidden: vec![32],
            activation: Activation::Tanh,
            epochs: 2000,
            lr: T::lit(0.01),
            seed: 0,
            holdout_fraction: 0.2,
            refit_output: true,
        }
    }
}

/// Regressed dynamics `f̂(s) + ĝ(s)u`.
#[derive(Clone, Debug, PartialEq)]
pub struct LearnedDynamics<T> {
    f_net: FeatureNet<T>,
    g_net: FeatureNet<T>,
    control_dim: usize,
    fit_error: T,
}

impl<T: Scalar> LearnedDynamics<T> {
    /// `f_net: Rⁿ → Rⁿ`, `g_net: Rⁿ → R^{n·m}` (row-major `n×m`).
    pub fn new(f_net: FeatureNet<T>, g_net: FeatureNet<T>, control_dim: usize) -> Result<Self> {
        let n = f_net.input_dim();
        if f_net.output_dim() != n {
            return Err(Error::Dimension { what: "drift regressor output", expected: n, actual: f_net.output_dim() });
        }
        if g_net.input_dim() != n {
            return Err(Error::Dimension { what: "input-matrix regressor input", expected: n, actual: g_net.input_dim() });
        }
        if control_dim == 0 || g_net.output_dim() != n * control_dim {
            return Err(Error::Dimension {
                what: "input-matrix regressor output",
                expected: n * control_dim,
                actual: g_net.output_dim(),
            });
        }
        Ok(Self { f_net, g_net, control_dim, fit_error: T::nan() })
    }

    pub fn f_net(&self) -> &FeatureNet<T> {
        &self.f_net
    }

    pub fn g_net(&self) -> &FeatureNet<T> {
        &self.g_net
    }

    /// Mean held-out L2 residual; NaN until measured.
    pub fn fit_error(&self) -> T {
        self.fit_error
    }

    pub fn set_fit_error(&mut self, eps: T) {
        self.fit_error = eps;
    }

    /// `(1/N) Σ ‖ṡ − f̂(s) − ĝ(s)u‖₂`.
    pub fn mean_residual(&self, samples: &[DynamicsSample<T>]) -> T {
        if samples.is_empty() {
            return T::zero();
        }
        let total: T = samples.iter().map(|smp| norm2(&self.residual(smp))).sum();
        total / T::from_usize_lossy(samples.len())
    }

    fn residual(&self, smp: &DynamicsSample<T>) -> Vec<T> {
        let v = self.velocity(&smp.state, &smp.control);
        smp.velocity.iter().zip(v).map(|(&a, b)| a - b).collect()
    }
}

impl<T: Scalar> ControlAffine<T> for LearnedDynamics<T> {
    fn state_dim(&self) -> usize {
        self.f_net.input_dim()
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn drift_into(&self, s: &[T], out: &mut [T]) {
        let v = self.f_net.forward(s).expect("state dimension checked by caller");
        out.copy_from_slice(&v);
    }

    fn input_matrix_into(&self, s: &[T], out: &mut [T]) {
        let v = self.g_net.forward(s).expect("state dimension checked by caller");
        out.copy_from_slice(&v);
    }
}

/// Grid states over `Ω` at spacing `delta`, each paired with a uniform random
/// control within bounds and the exact velocity.
pub fn generate_dynamics_samples<T: Scalar>(system: &SystemSpec<T>, delta: T, seed: u64) -> Result<Vec<DynamicsSample<T>>> {
    let grid = Grid::new(system.region(), delta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (system.u_min(), system.u_max());
    Ok((0..grid.len())
        .map(|i| {
            let state = grid.point(i);
            let control: Vec<T> = lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| a + (b - a) * T::lit(rng.random::<f64>()))
                .collect();
            let velocity = system.velocity(&state, &control);
            DynamicsSample { state, control, velocity }
        })
        .collect())
}

fn check_samples<T: Scalar>(samples: &[DynamicsSample<T>]) -> Result<(usize, usize)> {
    let first = samples.first().ok_or_else(|| Error::InvalidInput("pretraining needs at least one sample".into()))?;
    let (n, m) = (first.state.len(), first.control.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidInput("samples need non-empty state and control".into()));
    }
    for smp in samples {
        if smp.state.len() != n || smp.velocity.len() != n {
            return Err(Error::Dimension { what: "sample state/velocity", expected: n, actual: smp.state.len().min(smp.velocity.len()) });
        }
        if smp.control.len() != m {
            return Err(Error::Dimension { what: "sample control", expected: m, actual: smp.control.len() });
        }
    }
    Ok((n, m))
}

/// Mean-L2 loss of `model` on `samples` and its gradient with respect to
/// both regressors' parameters.
fn loss_and_gradient<T: Scalar>(
    model: &LearnedDynamics<T>,
    states: &[T],
    samples: &[&DynamicsSample<T>],
    ws: (&mut TangentWorkspace<T>, &mut TangentWorkspace<T>),
) -> (T, Vec<T>, Vec<T>) {
    let (ws_f, ws_g) = ws;
    let n = model.state_dim();
    let m = model.control_dim;
    let batch = samples.len();
    model.f_net.forward_batch(states, false, ws_f);
    model.g_net.forward_batch(states, false, ws_g);
    let inv_n = T::one() / T::from_usize_lossy(batch);
    let mut f_bar = vec![T::zero(); n * batch];
    let mut g_bar = vec![T::zero(); n * m * batch];
    let mut r = vec![T::zero(); n];
    let mut loss = T::zero();
    for (b, smp) in samples.iter().enumerate() {
        for i in 0..n {
            let mut pred = ws_f.value(i, b);
            for k in 0..m {
                pred += ws_g.value(i * m + k, b) * smp.control[k];
            }
            r[i] = smp.velocity[i] - pred;
        }
        let norm = norm2(&r);
        loss += norm * inv_n;
        if norm > T::zero() {
            let scale = inv_n / norm;
            for i in 0..n {
                f_bar[i * batch + b] = -r[i] * scale;
                for k in 0..m {
                    g_bar[(i * m + k) * batch + b] = -r[i] * smp.control[k] * scale;
                }
            }
        }
    }
    let mut gf = vec![T::zero(); model.f_net.num_params()];
    let mut gg = vec![T::zero(); model.g_net.num_params()];
    model.f_net.pullback_batch(ws_f, &f_bar, &mut gf);
    model.g_net.pullback_batch(ws_g, &g_bar, &mut gg);
    (loss, gf, gg)
}

/// Input to the last layer of `net` at `s`.
fn last_layer_features<T: Scalar>(net: &FeatureNet<T>, s: &[T]) -> Vec<T> {
    let layers = net.num_layers();
    if layers == 1 {
        return s.to_vec();
    }
    let mut rec = net.forward_record(s).expect("dimension checked");
    rec.post.swap_remove(layers - 2)
}

/// Replaces both output layers with the least-squares fit of `ṡ` given the
/// current hidden features. The residual is linear in those weights, so this
/// is exact for each state coordinate separately.
fn refit_output_layers<T: Scalar>(model: &mut LearnedDynamics<T>, samples: &[&DynamicsSample<T>]) -> Result<()> {
    let n = model.state_dim();
    let m = model.control_dim;
    let hf: Vec<Vec<T>> = samples.iter().map(|smp| last_layer_features(&model.f_net, &smp.state)).collect();
    let hg: Vec<Vec<T>> = samples.iter().map(|smp| last_layer_features(&model.g_net, &smp.state)).collect();
    let (wf, wg) = (hf[0].len(), hg[0].len());
    let dim = wf + 1 + m * (wg + 1);
    let mut features = vec![T::zero(); dim];
    let fl = model.f_net.layer(model.f_net.num_layers() - 1).offset;
    let gl = model.g_net.layer(model.g_net.num_layers() - 1).offset;
    let g_out = n * m;
    for i in 0..n {
        let mut normal = Matrix::zeros(dim, dim);
        let mut rhs = vec![T::zero(); dim];
        for (b, smp) in samples.iter().enumerate() {
            features[..wf].copy_from_slice(&hf[b]);
            features[wf] = T::one();
            for k in 0..m {
                let base = wf + 1 + k * (wg + 1);
                let u = smp.control[k];
                for (dst, &h) in features[base..base + wg].iter_mut().zip(&hg[b]) {
                    *dst = h * u;
                }
                features[base + wg] = u;
            }
            let y = smp.velocity[i];
            for p in 0..dim {
                let fp = features[p];
                rhs[p] += fp * y;
                for q in 0..dim {
                    normal[(p, q)] += fp * features[q];
                }
            }
        }
        let trace: T = (0..dim).map(|p| normal[(p, p)]).sum();
        let ridge = T::lit(1e-12) * trace / T::from_usize_lossy(dim) + T::min_positive_value();
        for p in 0..dim {
            normal[(p, p)] += ridge;
        }
        let w = normal.solve(&rhs)?;
        let fp = model.f_net.params_mut();
        fp[fl + i * wf..fl + (i + 1) * wf].copy_from_slice(&w[..wf]);
        fp[fl + n * wf + i] = w[wf];
        let gp = model.g_net.params_mut();
        for k in 0..m {
            let row = i * m + k;
            let base = wf + 1 + k * (wg + 1);
            gp[gl + row * wg..gl + (row + 1) * wg].copy_from_slice(&w[base..base + wg]);
            gp[gl + g_out * wg + row] = w[base + wg];
        }
    }
    Ok(())
}

/// Fits `f̂` and `ĝ` to `samples` by minimizing the mean L2 residual, then
/// reports the held-out mean residual as the fit error `ε`.
pub fn pretrain_dynamics<T: Scalar>(samples: &[DynamicsSample<T>], config: &PretrainConfig<T>) -> Result<LearnedDynamics<T>> {
    let (n, m) = check_samples(samples)?;
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        return Err(Error::Config(format!("holdout fraction must lie in [0, 1), got {}", config.holdout_fraction)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let holdout = if samples.len() >= 5 { (samples.len() as f64 * config.holdout_fraction) as usize } else { 0 };
    let (held, train) = order.split_at(holdout);
    let train: Vec<&DynamicsSample<T>> = train.iter().map(|&i| &samples[i]).collect();
    let held: Vec<&DynamicsSample<T>> = held.iter().map(|&i| &samples[i]).collect();

    let layers = config.hidden.len();
    let acts = FeatureNet::<T>::mlp_activations(layers, config.activation, Activation::Identity);
    let f_net = FeatureNet::init_uniform(FeatureNet::<T>::mlp_widths(n, &config.hidden, n), acts.clone(), &mut rng)?;
    let g_net = FeatureNet::init_uniform(FeatureNet::<T>::mlp_widths(n, &config.hidden, n * m), acts, &mut rng)?;
    let mut model = LearnedDynamics::new(f_net, g_net, m)?;

    let states: Vec<T> = train.iter().flat_map(|smp| smp.state.iter().copied()).collect();
    let mut adam_f = Adam::new(config.lr, model.f_net.num_params());
    let mut adam_g = Adam::new(config.lr, model.g_net.num_params());
    let (mut ws_f, mut ws_g) = (TangentWorkspace::new(), TangentWorkspace::new());
    for _ in 0..config.epochs {
        let (loss, gf, gg) = loss_and_gradient(&model, &states, &train, (&mut ws_f, &mut ws_g));
        if !loss.is_finite() {
            return Err(Error::Solver("dynamics pretraining loss became non-finite".into()));
        }
        adam_f.step(model.f_net.params_mut(), &gf);
        adam_g.step(model.g_net.params_mut(), &gg);
    }
    if config.refit_output {
        refit_output_layers(&mut model, &train)?;
    }
    let eval: Vec<DynamicsSample<T>> = if held.is_empty() { train } else { held }.into_iter().cloned().collect();
    model.fit_error = model.mean_residual(&eval);
    Ok(model)
}

/// The pretraining objective for an existing model.
pub fn dynamics_loss<T: Scalar>(model: &LearnedDynamics<T>, samples: &[DynamicsSample<T>]) -> T {
    model.mean_residual(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Region, SystemKind};

    fn linear_system() -> SystemSpec<f64> {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-2.0, -0.5]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        SystemSpec::new(SystemKind::Linear { a, b }, Region::symmetric(2, 1.0).unwrap(), vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn empty_sample_set_is_rejected() {
        let err = pretrain_dynamics::<f64>(&[], &PretrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn zero_nets_have_loss_equal_to_drift_norm() {
        let f = FeatureNet::<f64>::zeros(vec![2, 2], vec![Activation::Identity]).unwrap();
        let g = FeatureNet::<f64>::zeros(vec![2, 2], vec![Activation::Identity]).unwrap();
        let model = LearnedDynamics::new(f, g, 1).unwrap();
        let smp = DynamicsSample { state: vec![0.3, -0.1], control: vec![0.0], velocity: vec![0.0, 0.0] };
        let expect = norm2(&model.drift(&smp.state));
        assert_eq!(dynamics_loss(&model, &[smp]), expect);
        assert_eq!(expect, 0.0);
    }

    #[test]
    fn linear_system_is_recovered_by_affine_regressors() {
        let sys = linear_system();
        let samples = generate_dynamics_samples(&sys, 0.1, 3).unwrap();
        let config = PretrainConfig { hidden: vec![], epochs: 50, ..PretrainConfig::default() };
        let model = pretrain_dynamics(&samples, &config).unwrap();
        assert!(model.fit_error() <= 1e-6, "fit error {}", model.fit_error());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let sys = linear_system();
        let samples = generate_dynamics_samples(&sys, 0.5, 1).unwrap();
        let refs: Vec<&DynamicsSample<f64>> = samples.iter().collect();
        let states: Vec<f64> = samples.iter().flat_map(|s| s.state.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let acts = vec![Activation::Tanh, Activation::Identity];
        let f = FeatureNet::init_uniform(vec![2, 4, 2], acts.clone(), &mut rng).unwrap();
        let g = FeatureNet::init_uniform(vec![2, 4, 2], acts, &mut rng).unwrap();
        let mut model = LearnedDynamics::new(f, g, 1).unwrap();
        let (mut a, mut b) = (TangentWorkspace::new(), TangentWorkspace::new());
        let (_, gf, _) = loss_and_gradient(&model, &states, &refs, (&mut a, &mut b));
        let h = 1e-6;
        for p in 0..model.f_net.num_params() {
            let orig = model.f_net.params()[p];
            model.f_net.params_mut()[p] = orig + h;
            let lp = model.mean_residual(&samples);
            model.f_net.params_mut()[p] = orig - h;
            let lm = model.mean_residual(&samples);
            model.f_net.params_mut()[p] = orig;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - gf[p]).abs() <= 1e-6 * fd.abs().max(1.0), "param {p}: {fd} vs {}", gf[p]);
        }
    }

    #[test]
    fn pendulum_fit_error_is_small() {
        let sys = SystemSpec::pendulum(1.0, 1.0).unwrap();
        let samples = generate_dynamics_samples(&sys, 0.2, 0).unwrap();
        let model = pretrain_dynamics(&samples, &PretrainConfig::default()).unwrap();
        assert!(model.fit_error() <= 1e-2, "fit error {}", model.fit_error());
    }

    #[test]
    fn pretraining_is_deterministic() {
        let sys = linear_system();
        let samples = generate_dynamics_samples(&sys, 0.25, 4).unwrap();
        let config = PretrainConfig { hidden: vec![4], epochs: 20, ..PretrainConfig::default() };
        assert_eq!(pretrain_dynamics(&samples, &config).unwrap(), pretrain_dynamics(&samples, &config).unwrap());
    }
}
