//! Simulation and inference for batched two-arm bandit experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod contextual;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod inference;
pub mod model;
pub mod policy;
pub mod rng;
pub mod scalar;

pub use error::{Error, Invalid, Result};
pub use estimators::{EstimateReport, EstimatorKind, Variance};
pub use inference::{BandSet, TestMethod, TestResult};
pub use model::{BatchRecord, ExperimentSpec, NoiseVariance, Trajectory, TrendSpec};
pub use policy::{PolicyRule, PolicySpec};
pub use rng::Streams;
pub use scalar::Scalar;

pub type BatchRecord64 = BatchRecord<f64>;
pub type BatchRecord32 = BatchRecord<f32>;
pub type Trajectory64 = Trajectory<f64>;
pub type Trajectory32 = Trajectory<f32>;
pub type ExperimentSpec64 = ExperimentSpec<f64>;
pub type ExperimentSpec32 = ExperimentSpec<f32>;
