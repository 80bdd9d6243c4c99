//! Run configuration: a TOML file with `system`, `clf`, `controller`,
//! `train`, `pretrain`, `verify`, `roa`, `simulate` and `experiment` tables.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clfkit::clf::{ClfForm, QuadraticClf};
use clfkit::controllers::{ClfControllerParams, Controller, LqrControllerParams};
use clfkit::diffcore::Activation;
use clfkit::dynamics::{PretrainConfig, Region, SystemKind, SystemSpec};
use clfkit::linalg::Matrix;
use clfkit::roa::RoaOptions;
use clfkit::simulator::SimConfig;
use clfkit::trainer::{LegacyWeights, LossMode, NetShape, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub clf: ClfConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub pretrain: PretrainSettings,
    #[serde(default)]
    pub verify: VerifySettings,
    #[serde(default)]
    pub roa: RoaSettings,
    #[serde(default)]
    pub simulate: SimulateSettings,
    pub experiment: Option<ExperimentConfig>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// `pendulum`, `path_following`, `spacecraft`, `quadrotor` or `linear`.
    pub name: String,
    pub mass: Option<f64>,
    pub length: Option<f64>,
    pub damping: Option<f64>,
    pub gravity: Option<f64>,
    pub speed: Option<f64>,
    pub curvature: Option<f64>,
    pub mean_motion: Option<f64>,
    pub hcw_standard_form: Option<bool>,
    pub arm: Option<f64>,
    pub inertia: Option<f64>,
    pub a: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<Vec<f64>>>,
    /// One `[lo, hi]` pair per state coordinate.
    pub region: Option<Vec<[f64; 2]>>,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ClfConfig {
    pub hidden: Vec<usize>,
    pub output: usize,
    pub k: f64,
    pub activation: String,
    /// `sos` or `plain`; defaults to `sos`, or `plain` in legacy mode.
    pub form: Option<String>,
}

impl Default for ClfConfig {
    fn default() -> Self {
        let shape = NetShape::default();
        Self { hidden: shape.hidden, output: shape.output, k: 6.0, activation: shape.activation.name().into(), form: None }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// `clf`, `lqr` or `tanh_lqr`; defaults to `clf`, or `lqr` in legacy mode.
    pub kind: Option<String>,
    pub q1: f64,
    pub q2: f64,
    pub add_equilibrium_feedforward: bool,
    /// Diagonal of the LQR state weight; ones by default.
    pub lqr_q: Option<Vec<f64>>,
    /// Diagonal of the LQR input weight; ones by default.
    pub lqr_r: Option<Vec<f64>>,
    /// tanh-LQR amplitude; half the control range by default.
    pub u_amp: Option<Vec<f64>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self { kind: None, q1: 2.0, q2: 1e3, add_equilibrium_feedforward: false, lqr_q: None, lqr_r: None, u_amp: None }
    }
}

/// Overrides on top of the per-system training defaults.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    pub delta_learn: Option<f64>,
    pub delta_verify: Option<f64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub b: Option<f64>,
    pub eta1: Option<f64>,
    pub eta2: Option<f64>,
    pub h: Option<Vec<Vec<f64>>>,
    pub sample_weight: Option<f64>,
    pub lr: Option<f64>,
    pub verify_period: Option<usize>,
    pub max_step: Option<usize>,
    pub seed: Option<u64>,
    pub loss_mode: Option<String>,
    pub shaping: Option<bool>,
    pub r0: Option<f64>,
    pub counterexample_cap: Option<usize>,
    pub chunk: Option<usize>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    /// Train against a model written by `pretrain` instead of the analytic dynamics.
    pub dynamics_model: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainSettings {
    pub hidden: Vec<usize>,
    pub activation: String,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    pub refit_output: bool,
    /// Sample spacing; a fortieth of the narrowest region side by default.
    pub delta: Option<f64>,
}

impl Default for PretrainSettings {
    fn default() -> Self {
        let d = PretrainConfig::<f64>::default();
        Self {
            hidden: d.hidden,
            activation: d.activation.name().into(),
            epochs: d.epochs,
            lr: d.lr,
            seed: d.seed,
            holdout_fraction: d.holdout_fraction,
            refit_output: d.refit_output,
            delta: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySettings {
    /// Dense spacing; the training `delta_verify` by default.
    pub delta: Option<f64>,
    pub r0: f64,
    pub max_recorded: usize,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self { delta: None, r0: 0.0, max_recorded: 1000 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RoaSettings {
    /// Field spacing; the training `delta_verify` by default.
    pub delta: Option<f64>,
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl Default for RoaSettings {
    fn default() -> Self {
        let d = RoaOptions::default();
        Self { delta: None, max_iterations: d.max_iterations, rel_tol: d.rel_tol }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSettings {
    pub dt: f64,
    pub horizon: f64,
    pub arrival_tol: f64,
    pub divergence_factor: f64,
    /// Explicit starts; when empty, `samples` states are drawn inside the ROA.
    pub initial_states: Vec<Vec<f64>>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for SimulateSettings {
    fn default() -> Self {
        let d = SimConfig::<f64>::default();
        Self {
            dt: d.dt,
            horizon: d.horizon,
            arrival_tol: d.arrival_tol,
            divergence_factor: d.divergence_factor,
            initial_states: Vec::new(),
            samples: 10,
            seed: 0,
        }
    }
}

/// Parameter grids and seeds for `sweep`. Empty grids keep the `system` value.
#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub masses: Vec<f64>,
    pub lengths: Vec<f64>,
    pub curvatures: Vec<f64>,
    pub speeds: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Shaping weights to sweep; `0` means shaping off.
    pub eta1: Vec<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses and re-validates everything the pipelines will build.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let system = self.build_system()?;
        let train = self.build_train_config(&system)?;
        self.build_controller(&system, train.loss_mode)?;
        self.net_shape()?;
        self.clf_form(train.loss_mode)?;
        self.pretrain_config()?;
        self.sim_config()?;
        if let Some(exp) = &self.experiment {
            exp.validate(&self.system.name)?;
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SystemSpec<f64>, CliError> {
        self.system.build()
    }

    pub fn loss_mode(&self) -> Result<LossMode, CliError> {
        match &self.train.loss_mode {
            None => Ok(LossMode::Ours),
            Some(s) => LossMode::from_str(s).map_err(|e| CliError::Config(format!("train.loss_mode: {e}"))),
        }
    }

    pub fn clf_form(&self, mode: LossMode) -> Result<ClfForm, CliError> {
        match (&self.clf.form, mode) {
            (Some(s), _) => ClfForm::from_str(s).map_err(|e| CliError::Config(format!("clf.form: {e}"))),
            (None, LossMode::Ours) => Ok(ClfForm::SumOfSquares),
            (None, LossMode::Legacy) => Ok(ClfForm::Plain),
        }
    }

    pub fn net_shape(&self) -> Result<NetShape, CliError> {
        if self.clf.output == 0 || self.clf.hidden.contains(&0) {
            return Err(CliError::Config("clf.hidden and clf.output need positive widths".into()));
        }
        if !(self.clf.k > 0.0 && self.clf.k.is_finite()) {
            return Err(CliError::Config(format!("clf.k must be positive, got {}", self.clf.k)));
        }
        Ok(NetShape { hidden: self.clf.hidden.clone(), output: self.clf.output, activation: parse_activation("clf.activation", &self.clf.activation)? })
    }

    pub fn build_train_config(&self, system: &SystemSpec<f64>) -> Result<TrainConfig<f64>, CliError> {
        let n = system.equilibrium().len();
        let t = &self.train;
        let mut c = match system.kind() {
            SystemKind::PathFollowing { .. } => TrainConfig::path_following(n),
            _ => TrainConfig::pendulum(n),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = t.$f { c.$f = v; } )* };
        }
        set!(delta_learn, delta_verify, lambda1, lambda2, b, eta1, eta2, sample_weight, lr, verify_period, max_step, seed, shaping, r0, counterexample_cap, chunk);
        if let Some(h) = &t.h {
            c.h = Matrix::from_rows(h).map_err(|e| CliError::Config(format!("train.h: {e}")))?;
        }
        c.loss_mode = self.loss_mode()?;
        let mut w = LegacyWeights::default();
        for (slot, v) in [(&mut w.c1, t.c1), (&mut w.c2, t.c2), (&mut w.c3, t.c3), (&mut w.c4, t.c4), (&mut w.b1, t.b1), (&mut w.b2, t.b2)] {
            if let Some(v) = v {
                *slot = v;
            }
        }
        c.legacy = w;
        if c.chunk == 0 || c.counterexample_cap == 0 {
            return Err(CliError::Config("train.chunk and train.counterexample_cap must be positive".into()));
        }
        c.validate(n).map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(c)
    }

    pub fn controller_kind(&self, mode: LossMode) -> &str {
        match (&self.controller.kind, mode) {
            (Some(k), _) => k,
            (None, LossMode::Ours) => "clf",
            (None, LossMode::Legacy) => "lqr",
        }
    }

    pub fn build_controller(&self, system: &SystemSpec<f64>, mode: LossMode) -> Result<Controller<f64>, CliError> {
        let c = &self.controller;
        let cfg = |msg: String| CliError::Config(format!("controller: {msg}"));
        let (n, m) = (system.equilibrium().len(), system.u_min().len());
        match self.controller_kind(mode) {
            "clf" => {
                let p = ClfControllerParams::uniform(c.q1, c.q2, system.u_min().to_vec(), system.u_max().to_vec(), system.equilibrium_control().to_vec())
                    .and_then(|p| p.with_feedforward(c.add_equilibrium_feedforward))
                    .map_err(|e| cfg(e.to_string()))?;
                Ok(Controller::Clf(p))
            }
            kind @ ("lqr" | "tanh_lqr") => {
                let q = diagonal("lqr_q", c.lqr_q.as_deref(), n)?;
                let r = diagonal("lqr_r", c.lqr_r.as_deref(), m)?;
                let lqr = QuadraticClf::lqr(system, &q, &r).map_err(|e| cfg(e.to_string()))?;
                let p = LqrControllerParams::from_riccati_gain(lqr.gain(), system.equilibrium().to_vec(), system.equilibrium_control().to_vec())
                    .map_err(|e| cfg(e.to_string()))?;
                if kind == "lqr" {
                    return Ok(Controller::Lqr(p));
                }
                let amp = match &c.u_amp {
                    Some(a) => a.clone(),
                    None => system.u_min().iter().zip(system.u_max()).map(|(lo, hi)| 0.5 * (hi - lo)).collect(),
                };
                Ok(Controller::TanhLqr(p.with_amplitude(amp).map_err(|e| cfg(e.to_string()))?))
            }
            other => Err(cfg(format!("unknown kind `{other}` (expected clf, lqr or tanh_lqr)"))),
        }
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig<f64>, CliError> {
        let p = &self.pretrain;
        if !(0.0..1.0).contains(&p.holdout_fraction) {
            return Err(CliError::Config(format!("pretrain.holdout_fraction must lie in [0, 1), got {}", p.holdout_fraction)));
        }
        if !(p.lr > 0.0) {
            return Err(CliError::Config(format!("pretrain.lr must be positive, got {}", p.lr)));
        }
        Ok(PretrainConfig {
            hidden: p.hidden.clone(),
            activation: parse_activation("pretrain.activation", &p.activation)?,
            epochs: p.epochs,
            lr: p.lr,
            seed: p.seed,
            holdout_fraction: p.holdout_fraction,
            refit_output: p.refit_output,
        })
    }

    pub fn pretrain_delta(&self, system: &SystemSpec<f64>) -> f64 {
        self.pretrain.delta.unwrap_or(system.region().min_extent() / 40.0)
    }

    pub fn sim_config(&self) -> Result<SimConfig<f64>, CliError> {
        let s = &self.simulate;
        if !(s.dt > 0.0) || !(s.horizon >= 0.0) || !(s.arrival_tol >= 0.0) || !(s.divergence_factor >= 1.0) {
            return Err(CliError::Config("simulate needs dt > 0, horizon ≥ 0, arrival_tol ≥ 0 and divergence_factor ≥ 1".into()));
        }
        Ok(SimConfig { dt: s.dt, horizon: s.horizon, arrival_tol: s.arrival_tol, divergence_factor: s.divergence_factor })
    }

    pub fn roa_options(&self) -> RoaOptions {
        RoaOptions { max_iterations: self.roa.max_iterations, rel_tol: self.roa.rel_tol }
    }

    /// Applies the command-line overrides.
    pub fn apply_overrides(&mut self, seed: Option<u64>, loss_mode: Option<LossMode>, shaping: Option<bool>) -> Result<(), CliError> {
        if let Some(s) = seed {
            self.train.seed = Some(s);
        }
        if let Some(m) = loss_mode {
            self.train.loss_mode = Some(m.name().into());
        }
        if let Some(on) = shaping {
            self.train.shaping = Some(on);
        }
        self.validate()
    }
}

impl SystemConfig {
    fn allowed_keys(&self) -> Result<&'static [&'static str], CliError> {
        Ok(match self.name.as_str() {
            "pendulum" => &["mass", "length", "damping", "gravity"],
            "path_following" => &["speed", "curvature"],
            "spacecraft" => &["mean_motion", "hcw_standard_form"],
            "quadrotor" => &["mass", "arm", "inertia", "gravity"],
            "linear" => &["a", "b"],
            other => {
                return Err(CliError::Config(format!(
                    "system.name: unknown system `{other}` (expected pendulum, path_following, spacecraft, quadrotor or linear)"
                )))
            }
        })
    }

    fn set_keys(&self) -> Vec<&'static str> {
        let flags = [
            ("mass", self.mass.is_some()),
            ("length", self.length.is_some()),
            ("damping", self.damping.is_some()),
            ("gravity", self.gravity.is_some()),
            ("speed", self.speed.is_some()),
            ("curvature", self.curvature.is_some()),
            ("mean_motion", self.mean_motion.is_some()),
            ("hcw_standard_form", self.hcw_standard_form.is_some()),
            ("arm", self.arm.is_some()),
            ("inertia", self.inertia.is_some()),
            ("a", self.a.is_some()),
            ("b", self.b.is_some()),
        ];
        flags.into_iter().filter(|(_, on)| *on).map(|(k, _)| k).collect()
    }

    pub fn build(&self) -> Result<SystemSpec<f64>, CliError> {
        let allowed = self.allowed_keys()?;
        if let Some(key) = self.set_keys().into_iter().find(|k| !allowed.contains(k)) {
            return Err(CliError::Config(format!("system.{key} does not apply to system `{}`", self.name)));
        }
        let cfg = |e: clfkit::Error| CliError::Config(format!("system: {e}"));
        let base = match self.name.as_str() {
            "pendulum" => SystemSpec::pendulum(self.mass.unwrap_or(1.0), self.length.unwrap_or(1.0)).map_err(cfg)?,
            "path_following" => SystemSpec::path_following(self.speed.unwrap_or(1.0), self.curvature.unwrap_or(1.0)).map_err(cfg)?,
            "spacecraft" => SystemSpec::spacecraft(self.hcw_standard_form.unwrap_or(false)).map_err(cfg)?,
            "quadrotor" => SystemSpec::quadrotor().map_err(cfg)?,
            _ => return self.build_linear(),
        };
        let kind = match base.kind().clone() {
            SystemKind::Pendulum { mass, length, damping, gravity } => SystemKind::Pendulum {
                mass,
                length,
                damping: self.damping.unwrap_or(damping),
                gravity: self.gravity.unwrap_or(gravity),
            },
            SystemKind::Spacecraft { mean_motion, standard_form } => {
                SystemKind::Spacecraft { mean_motion: self.mean_motion.unwrap_or(mean_motion), standard_form }
            }
            SystemKind::Quadrotor { mass, arm, inertia, gravity } => SystemKind::Quadrotor {
                mass: self.mass.unwrap_or(mass),
                arm: self.arm.unwrap_or(arm),
                inertia: self.inertia.unwrap_or(inertia),
                gravity: self.gravity.unwrap_or(gravity),
            },
            other => other,
        };
        let region = match &self.region {
            Some(r) => build_region(r)?,
            None => base.region().clone(),
        };
        let u_min = self.u_min.clone().unwrap_or_else(|| base.u_min().to_vec());
        let u_max = self.u_max.clone().unwrap_or_else(|| base.u_max().to_vec());
        SystemSpec::new(kind, region, u_min, u_max).map_err(cfg)
    }

    fn build_linear(&self) -> Result<SystemSpec<f64>, CliError> {
        let need = |key: &str| CliError::Config(format!("system.{key} is required for the linear system"));
        let a = Matrix::from_rows(self.a.as_ref().ok_or_else(|| need("a"))?).map_err(|e| CliError::Config(format!("system.a: {e}")))?;
        let b = Matrix::from_rows(self.b.as_ref().ok_or_else(|| need("b"))?).map_err(|e| CliError::Config(format!("system.b: {e}")))?;
        let region = build_region(self.region.as_ref().ok_or_else(|| need("region"))?)?;
        let u_min = self.u_min.clone().ok_or_else(|| need("u_min"))?;
        let u_max = self.u_max.clone().ok_or_else(|| need("u_max"))?;
        SystemSpec::new(SystemKind::Linear { a, b }, region, u_min, u_max).map_err(|e| CliError::Config(format!("system: {e}")))
    }
}

impl ExperimentConfig {
    fn validate(&self, system: &str) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("experiment.seeds must list at least one seed".into()));
        }
        let (pendulum, path) = (!self.masses.is_empty() || !self.lengths.is_empty(), !self.curvatures.is_empty() || !self.speeds.is_empty());
        if (pendulum && system != "pendulum") || (path && system != "path_following") {
            return Err(CliError::Config(format!("experiment parameter grids do not match system `{system}`")));
        }
        if self.eta1.iter().any(|e| !(*e >= 0.0)) {
            return Err(CliError::Config("experiment.eta1 values must be non-negative".into()));
        }
        Ok(())
    }

    /// System variants in row-major order over the two parameter grids.
    pub fn system_variants(&self, base: &SystemConfig) -> Vec<SystemConfig> {
        let (first, second): (Vec<Option<f64>>, Vec<Option<f64>>) = match base.name.as_str() {
            "path_following" => (opt_grid(&self.curvatures), opt_grid(&self.speeds)),
            _ => (opt_grid(&self.masses), opt_grid(&self.lengths)),
        };
        let mut out = Vec::with_capacity(first.len() * second.len());
        for p1 in &first {
            for p2 in &second {
                let mut sys = base.clone();
                if base.name == "path_following" {
                    sys.curvature = p1.or(sys.curvature);
                    sys.speed = p2.or(sys.speed);
                } else {
                    sys.mass = p1.or(sys.mass);
                    sys.length = p2.or(sys.length);
                }
                out.push(sys);
            }
        }
        out
    }
}

fn opt_grid(values: &[f64]) -> Vec<Option<f64>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

fn parse_activation(key: &str, s: &str) -> Result<Activation, CliError> {
    Activation::from_str(s).map_err(|e| CliError::Config(format!("{key}: {e}")))
}

fn build_region(bounds: &[[f64; 2]]) -> Result<Region<f64>, CliError> {
    Region::new(bounds.iter().map(|b| (b[0], b[1])).collect()).map_err(|e| CliError::Config(format!("system.region: {e}")))
}

fn diagonal(key: &str, values: Option<&[f64]>, n: usize) -> Result<Matrix<f64>, CliError> {
    match values {
        None => Ok(Matrix::identity(n)),
        Some(v) if v.len() == n && v.iter().all(|x| *x > 0.0) => Ok(Matrix::from_diagonal(v)),
        Some(v) => Err(CliError::Config(format!("controller.{key} needs {n} positive entries, got {v:?}"))),
    }
}
