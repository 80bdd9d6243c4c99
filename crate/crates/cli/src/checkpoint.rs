//! JSON checkpoints for trained CLFs and pretrained dynamics models.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! save → load → save reproduces the same bytes.

use std::path::Path;
use std::str::FromStr;

use clfkit::clf::{ClfCandidate, ClfForm};
use clfkit::controllers::{ClfControllerParams, Controller, LqrControllerParams};
use clfkit::diffcore::{Activation, FeatureNet};
use clfkit::dynamics::{LearnedDynamics, Region, SystemKind, SystemSpec};
use clfkit::linalg::Matrix;
use clfkit::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub system: SystemRecord,
    pub clf: ClfRecord,
    pub controller: ControllerRecord,
    pub train_config_hash: String,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SystemRecord {
    pub kind: KindRecord,
    pub region: Vec<[f64; 2]>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub equilibrium: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum KindRecord {
    Pendulum { mass: f64, length: f64, damping: f64, gravity: f64 },
    PathFollowing { speed: f64, curvature: f64 },
    Spacecraft { mean_motion: f64, standard_form: bool },
    Quadrotor { mass: f64, arm: f64, inertia: f64, gravity: f64 },
    Linear { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NetRecord {
    pub widths: Vec<usize>,
    pub activations: Vec<String>,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ClfRecord {
    pub form: String,
    pub k: f64,
    pub equilibrium: Vec<f64>,
    pub net: NetRecord,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerRecord {
    Clf { q1: Vec<f64>, q2: Vec<f64>, u_min: Vec<f64>, u_max: Vec<f64>, u_eq: Vec<f64>, singular_threshold: f64, feedforward: bool },
    Lqr { feedback: Vec<Vec<f64>>, equilibrium: Vec<f64>, u_eq: Vec<f64> },
    TanhLqr { feedback: Vec<Vec<f64>>, equilibrium: Vec<f64>, u_eq: Vec<f64>, amplitude: Vec<f64> },
}

/// A pretrained dynamics model.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DynamicsCheckpoint {
    pub format_version: u32,
    pub system: SystemRecord,
    pub control_dim: usize,
    pub fit_error: f64,
    pub f_net: NetRecord,
    pub g_net: NetRecord,
}

fn corrupt(e: impl std::fmt::Display) -> CliError {
    CliError::Checkpoint(e.to_string())
}

impl SystemRecord {
    pub fn from_spec(spec: &SystemSpec<f64>) -> Self {
        let kind = match spec.kind().clone() {
            SystemKind::Pendulum { mass, length, damping, gravity } => KindRecord::Pendulum { mass, length, damping, gravity },
            SystemKind::PathFollowing { speed, curvature } => KindRecord::PathFollowing { speed, curvature },
            SystemKind::Spacecraft { mean_motion, standard_form } => KindRecord::Spacecraft { mean_motion, standard_form },
            SystemKind::Quadrotor { mass, arm, inertia, gravity } => KindRecord::Quadrotor { mass, arm, inertia, gravity },
            SystemKind::Linear { a, b } => KindRecord::Linear { a: a.to_rows(), b: b.to_rows() },
        };
        Self {
            kind,
            region: spec.region().bounds().iter().map(|&(lo, hi)| [lo, hi]).collect(),
            u_min: spec.u_min().to_vec(),
            u_max: spec.u_max().to_vec(),
            equilibrium: spec.equilibrium().to_vec(),
        }
    }

    pub fn to_spec(&self) -> Result<SystemSpec<f64>, CliError> {
        let kind = match self.kind.clone() {
            KindRecord::Pendulum { mass, length, damping, gravity } => SystemKind::Pendulum { mass, length, damping, gravity },
            KindRecord::PathFollowing { speed, curvature } => SystemKind::PathFollowing { speed, curvature },
            KindRecord::Spacecraft { mean_motion, standard_form } => SystemKind::Spacecraft { mean_motion, standard_form },
            KindRecord::Quadrotor { mass, arm, inertia, gravity } => SystemKind::Quadrotor { mass, arm, inertia, gravity },
            KindRecord::Linear { a, b } => SystemKind::Linear { a: Matrix::from_rows(&a).map_err(corrupt)?, b: Matrix::from_rows(&b).map_err(corrupt)? },
        };
        let region = Region::new(self.region.iter().map(|b| (b[0], b[1])).collect()).map_err(corrupt)?;
        SystemSpec::with_equilibrium(kind, region, self.u_min.clone(), self.u_max.clone(), self.equilibrium.clone()).map_err(corrupt)
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KindRecord::Pendulum { .. } => "pendulum",
            KindRecord::PathFollowing { .. } => "path_following",
            KindRecord::Spacecraft { .. } => "spacecraft",
            KindRecord::Quadrotor { .. } => "quadrotor",
            KindRecord::Linear { .. } => "linear",
        }
    }

    /// Errors unless `spec` is exactly the system this record describes.
    pub fn ensure_matches(&self, spec: &SystemSpec<f64>) -> Result<(), CliError> {
        let other = Self::from_spec(spec);
        if *self == other {
            return Ok(());
        }
        Err(CliError::Checkpoint(format!(
            "checkpoint was built for {:?} but the config describes {:?}",
            self, other
        )))
    }
}

impl NetRecord {
    pub fn from_net(net: &FeatureNet<f64>) -> Self {
        Self {
            widths: net.widths().to_vec(),
            activations: net.activations().iter().map(|a| a.name().to_string()).collect(),
            params: net.params().to_vec(),
        }
    }

    pub fn to_net(&self) -> Result<FeatureNet<f64>, CliError> {
        let acts = self
            .activations
            .iter()
            .map(|s| Activation::from_str(s).map_err(corrupt))
            .collect::<Result<Vec<_>, _>>()?;
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(corrupt("non-finite network weight"));
        }
        FeatureNet::new(self.widths.clone(), acts, self.params.clone()).map_err(corrupt)
    }
}

impl ClfRecord {
    pub fn from_candidate(clf: &ClfCandidate<f64>) -> Self {
        use clfkit::clf::Lyapunov;
        Self { form: clf.form().name().into(), k: clf.k(), equilibrium: clf.equilibrium().to_vec(), net: NetRecord::from_net(clf.net()) }
    }

    pub fn to_candidate(&self) -> Result<ClfCandidate<f64>, CliError> {
        let form = ClfForm::from_str(&self.form).map_err(corrupt)?;
        ClfCandidate::new(self.net.to_net()?, self.k, self.equilibrium.clone(), form).map_err(corrupt)
    }
}

impl ControllerRecord {
    pub fn from_controller(c: &Controller<f64>) -> Self {
        match c {
            Controller::Clf(p) => Self::Clf {
                q1: p.q1().to_vec(),
                q2: p.q2().to_vec(),
                u_min: p.u_min().to_vec(),
                u_max: p.u_max().to_vec(),
                u_eq: p.u_eq().to_vec(),
                singular_threshold: p.singular_threshold(),
                feedforward: p.feedforward(),
            },
            Controller::Lqr(p) => Self::Lqr { feedback: p.feedback().to_rows(), equilibrium: p.equilibrium().to_vec(), u_eq: p.u_eq().to_vec() },
            Controller::TanhLqr(p) => Self::TanhLqr {
                feedback: p.feedback().to_rows(),
                equilibrium: p.equilibrium().to_vec(),
                u_eq: p.u_eq().to_vec(),
                amplitude: p.amplitude().to_vec(),
            },
        }
    }

    pub fn to_controller(&self) -> Result<Controller<f64>, CliError> {
        let lqr = |fb: &[Vec<f64>], eq: &[f64], u_eq: &[f64]| {
            LqrControllerParams::new(Matrix::from_rows(fb).map_err(corrupt)?, eq.to_vec(), u_eq.to_vec()).map_err(corrupt)
        };
        Ok(match self {
            Self::Clf { q1, q2, u_min, u_max, u_eq, singular_threshold, feedforward } => Controller::Clf(
                ClfControllerParams::new(q1.clone(), q2.clone(), u_min.clone(), u_max.clone(), u_eq.clone())
                    .and_then(|p| p.with_feedforward(*feedforward))
                    .map_err(corrupt)?
                    .with_singular_threshold(*singular_threshold),
            ),
            Self::Lqr { feedback, equilibrium, u_eq } => Controller::Lqr(lqr(feedback, equilibrium, u_eq)?),
            Self::TanhLqr { feedback, equilibrium, u_eq, amplitude } => {
                Controller::TanhLqr(lqr(feedback, equilibrium, u_eq)?.with_amplitude(amplitude.clone()).map_err(corrupt)?)
            }
        })
    }
}

/// Hex SHA-256 of the resolved training settings.
pub fn train_config_hash(config: &TrainConfig<f64>) -> String {
    format!("{:x}", Sha256::digest(format!("{config:?}").as_bytes()))
}

impl Checkpoint {
    pub fn new(system: &SystemSpec<f64>, clf: &ClfCandidate<f64>, controller: &Controller<f64>, train: &TrainConfig<f64>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            system: SystemRecord::from_spec(system),
            clf: ClfRecord::from_candidate(clf),
            controller: ControllerRecord::from_controller(controller),
            train_config_hash: train_config_hash(train),
        }
    }

    pub fn to_text(&self) -> String {
        to_text(self)
    }

    pub fn from_text(text: &str) -> Result<Self, CliError> {
        let ck: Self = from_text(text)?;
        check_version(ck.format_version)?;
        // Surface inconsistencies at load rather than at first use.
        ck.clf.to_candidate()?;
        ck.controller.to_controller()?;
        ck.system.to_spec()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text).map_err(|e| CliError::Checkpoint(format!("{}: {}", path.display(), strip(e))))
    }
}

impl DynamicsCheckpoint {
    pub fn new(system: &SystemSpec<f64>, model: &LearnedDynamics<f64>) -> Self {
        use clfkit::dynamics::ControlAffine;
        Self {
            format_version: FORMAT_VERSION,
            system: SystemRecord::from_spec(system),
            control_dim: model.control_dim(),
            fit_error: model.fit_error(),
            f_net: NetRecord::from_net(model.f_net()),
            g_net: NetRecord::from_net(model.g_net()),
        }
    }

    pub fn to_model(&self) -> Result<LearnedDynamics<f64>, CliError> {
        let mut model = LearnedDynamics::new(self.f_net.to_net()?, self.g_net.to_net()?, self.control_dim).map_err(corrupt)?;
        model.set_fit_error(self.fit_error);
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, to_text(self)).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        let ck: Self = from_text(&text).map_err(|e| CliError::Checkpoint(format!("{}: {}", path.display(), strip(e))))?;
        check_version(ck.format_version)?;
        ck.to_model()?;
        Ok(ck)
    }
}

fn to_text<S: Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("records hold only finite floats");
    s.push('\n');
    s
}

fn from_text<D: DeserializeOwned>(text: &str) -> Result<D, CliError> {
    serde_json::from_str(text).map_err(corrupt)
}

fn check_version(v: u32) -> Result<(), CliError> {
    if v != FORMAT_VERSION {
        return Err(CliError::Checkpoint(format!("unsupported format version {v} (expected {FORMAT_VERSION})")));
    }
    Ok(())
}

fn strip(e: CliError) -> String {
    match e {
        CliError::Checkpoint(msg) => msg,
        other => other.to_string(),
    }
}
