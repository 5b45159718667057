//! Margin estimators for two-arm batched bandit data.
//!
//! Everything here is a pure function of the logged batches. Data that cannot
//! support an estimate (an arm never pulled, too few observations) yields an
//! [`Invalid`] reason instead of an error so Monte Carlo loops keep going.

mod aipw;
mod bols;
mod ols;
mod snbound;
mod wdecorrelated;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Invalid};
use crate::scalar::Scalar;

pub use aipw::{aw_aipw, aw_aipw_report, aw_aipw_scores, aw_aipw_with, AwAipwFit, PriorMean};
pub use bols::{batch_sigma2, bols_all, bols_batch, bols_pooled_report, BatchEstimate, BolsFit};
pub use ols::{ols_report, ols_z_statistic, pooled_ols, pooled_sigma2, OlsFit};
pub use snbound::{sn_bound_test, sn_bound_test_at, sn_radius, SnBoundTest};
pub use wdecorrelated::{
    select_lambda, w_decorrelated, wdecorrelated_report, wdecorrelated_weights, wdecorrelated_weights_closed_form,
    WDecorrelatedFit,
};

/// Estimators and tests known to the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "ols")]
    Ols,
    #[serde(rename = "bols")]
    Bols,
    #[serde(rename = "wdecorrelated")]
    WDecorrelated,
    #[serde(rename = "awaipw")]
    AwAipw,
    #[serde(rename = "snbound")]
    SnBound,
    #[serde(rename = "bols_nste")]
    BolsNste,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 6] = [
        EstimatorKind::Ols,
        EstimatorKind::Bols,
        EstimatorKind::WDecorrelated,
        EstimatorKind::AwAipw,
        EstimatorKind::SnBound,
        EstimatorKind::BolsNste,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Ols => "ols",
            EstimatorKind::Bols => "bols",
            EstimatorKind::WDecorrelated => "wdecorrelated",
            EstimatorKind::AwAipw => "awaipw",
            EstimatorKind::SnBound => "snbound",
            EstimatorKind::BolsNste => "bols_nste",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EstimatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

/// Noise variance used to standardize an estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum Variance<F> {
    /// Known and constant.
    Known(F),
    /// Known, one value per batch (indexed by `t - 1`).
    PerBatch(Vec<F>),
    /// Estimated from the data.
    Estimated,
}

impl<F: Scalar> Variance<F> {
    pub fn is_estimated(&self) -> bool {
        matches!(self, Variance::Estimated)
    }

    /// A single pooled value for estimators that need one.
    pub(crate) fn pooled(&self) -> Option<F> {
        match self {
            Variance::Known(s) => Some(*s),
            Variance::PerBatch(v) if !v.is_empty() => {
                Some(v.iter().fold(F::zero(), |a, &b| a + b) / F::from_count(v.len()))
            }
            _ => None,
        }
    }
}

/// Point estimate plus the factor that standardizes it.
///
/// When valid, `statistic == scale * (estimate - null)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport<F = f64> {
    pub estimator: EstimatorKind,
    pub estimate: F,
    pub scale: F,
    pub statistic: F,
    pub df_hint: Option<usize>,
    pub valid: bool,
    pub reason: Option<Invalid>,
}

impl<F: Scalar> EstimateReport<F> {
    pub fn new(estimator: EstimatorKind, estimate: F, scale: F, null: F) -> Self {
        Self {
            estimator,
            estimate,
            scale,
            statistic: scale * (estimate - null),
            df_hint: None,
            valid: true,
            reason: None,
        }
    }

    pub fn invalid(estimator: EstimatorKind, reason: Invalid) -> Self {
        Self {
            estimator,
            estimate: F::nan(),
            scale: F::nan(),
            statistic: F::nan(),
            df_hint: None,
            valid: false,
            reason: Some(reason),
        }
    }

    pub fn with_df(mut self, df: usize) -> Self {
        self.df_hint = Some(df);
        self
    }
}

/// Arm means from sums and counts, `EmptyArm` if either count is zero.
pub(crate) fn arm_means<F: Scalar>(n0: usize, s0: F, n1: usize, s1: F) -> Result<(F, F), Invalid> {
    if n0 == 0 || n1 == 0 {
        return Err(Invalid::EmptyArm);
    }
    Ok((s0 / F::from_count(n0), s1 / F::from_count(n1)))
}
