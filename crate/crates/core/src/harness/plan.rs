use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, Variance};
use crate::inference::DEFAULT_CUTOFF_DRAWS;
use crate::model::{build_trend, ExperimentSpec, NoiseVariance};

/// How critical values are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    #[default]
    TheoreticalCutoffs,
    /// Estimators whose null rejection rate exceeds `alpha` by more than two
    /// Monte Carlo standard errors get the empirical null quantile instead.
    NullCalibrated,
}

/// Where a run writes its files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<PathBuf>,
}

/// A Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPlan {
    pub spec: ExperimentSpec<f64>,
    #[serde(default = "all_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub calibration: Calibration,
    /// Null replications used by `null_calibrated`; defaults to `reps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_reps: Option<usize>,
    /// Fixed critical values (on `|statistic|`, or the statistic itself for
    /// one-sided tests) that replace the theoretical ones.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub cutoffs: BTreeMap<EstimatorKind, f64>,
    /// Root seed; defaults to the spec's seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Compute simultaneous bands and their joint coverage.
    #[serde(default)]
    pub bands: bool,
    /// Keep per-replication statistics.
    #[serde(default)]
    pub raw: bool,
    /// Null simulations for choosing the W-decorrelated `lambda`.
    #[serde(default = "default_lambda_reps")]
    pub lambda_reps: usize,
    /// Fixed `lambda`, skipping the selection step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Confidence level of the self-normalized bound; defaults to `alpha`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sn_delta: Option<f64>,
    #[serde(default = "default_draws")]
    pub cutoff_draws: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

fn all_estimators() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_reps() -> usize {
    10_000
}

fn default_alpha() -> f64 {
    0.05
}

fn default_lambda_reps() -> usize {
    1000
}

fn default_draws() -> usize {
    DEFAULT_CUTOFF_DRAWS
}

impl McPlan {
    pub fn new(spec: ExperimentSpec<f64>) -> Self {
        Self {
            spec,
            estimators: all_estimators(),
            reps: default_reps(),
            alpha: default_alpha(),
            calibration: Calibration::default(),
            calibration_reps: None,
            cutoffs: BTreeMap::new(),
            seed: None,
            bands: false,
            raw: false,
            lambda_reps: default_lambda_reps(),
            lambda: None,
            sn_delta: None,
            cutoff_draws: default_draws(),
            output: OutputPaths::default(),
        }
    }

    pub fn with_estimators(mut self, estimators: &[EstimatorKind]) -> Self {
        self.estimators = estimators.to_vec();
        self
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_calibration(mut self, calibration: Calibration) -> Self {
        self.calibration = calibration;
        self
    }

    pub fn root_seed(&self) -> u64 {
        self.seed.unwrap_or(self.spec.seed)
    }

    pub fn sn_delta(&self) -> f64 {
        self.sn_delta.unwrap_or(self.alpha)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidSpec("reps must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidSpec(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidSpec("no estimators requested".into()));
        }
        if let Some(d) = self.sn_delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::InvalidSpec("sn_delta must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }

    /// Whether every batch has zero margin.
    pub fn is_null(&self) -> Result<bool> {
        let pairs = build_trend(&self.spec.trend, self.spec.horizon)?;
        Ok(pairs.iter().all(|(b0, b1)| b0 == b1))
    }

    /// Same plan with the margin removed from every batch.
    pub fn to_null(&self) -> Result<Self> {
        let mut p = self.clone();
        p.spec = self.spec.to_null()?;
        Ok(p)
    }
}

/// Variance handed to the estimators: the configured noise variance when
/// it is treated as known, otherwise estimated.
pub fn variance_mode(spec: &ExperimentSpec<f64>) -> Variance<f64> {
    if spec.sigma_known {
        match &spec.noise_sigma2 {
            NoiseVariance::Constant(s) => Variance::Known(*s),
            NoiseVariance::Schedule(v) => Variance::PerBatch(v.clone()),
        }
    } else {
        Variance::Estimated
    }
}
