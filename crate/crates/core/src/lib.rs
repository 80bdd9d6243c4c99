//! Sum-of-squares neural control Lyapunov functions with a bounded CLF
//! controller: training, dense-grid verification, region-of-attraction
//! estimation and closed-loop simulation.
//!
//! Everything is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the double-precision types the pipelines use.

pub mod clf;
pub mod controllers;
pub mod diffcore;
pub mod dynamics;
pub mod grid;
pub mod linalg;
pub mod optim;
pub mod roa;
pub mod scalar;
pub mod simulator;
pub mod trainer;
pub mod verify;
mod error;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type FeatureNet64 = diffcore::FeatureNet<f64>;
pub type SystemSpec64 = dynamics::SystemSpec<f64>;
pub type Region64 = dynamics::Region<f64>;
pub type LearnedDynamics64 = dynamics::LearnedDynamics<f64>;
pub type ClfCandidate64 = clf::ClfCandidate<f64>;
pub type QuadraticClf64 = clf::QuadraticClf<f64>;
pub type Controller64 = controllers::Controller<f64>;
pub type TrainConfig64 = trainer::TrainConfig<f64>;
pub type VerificationReport64 = verify::VerificationReport<f64>;
pub type RoaResult64 = roa::RoaResult<f64>;
pub type Trajectory64 = simulator::Trajectory<f64>;

pub type FeatureNet32 = diffcore::FeatureNet<f32>;
pub type ClfCandidate32 = clf::ClfCandidate<f32>;
