//! Test statistics, critical values, and confidence bands.

mod bands;
mod combine;
mod cutoffs;
pub mod special;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub use bands::{bands_from_batches, simultaneous_bands, Band, BandSet};
pub use combine::{bols_combined_statistic, global_null_statistic, standardized_terms, usable_estimates};
pub use cutoffs::{
    chi_squared_cutoff, global_null_t_cutoff, t_combination_cutoff, upper_quantile, CutoffCache, CutoffKey, CutoffKind,
    DEFAULT_CUTOFF_DRAWS,
};
pub use special::{std_normal_cdf, std_normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Normal,
    TCombination,
    ChiSqCombination,
    BonferroniBand,
    SnBound,
    /// Empirical cutoff from null simulations.
    NullCalibrated,
}

/// Outcome of one hypothesis test.
///
/// Two-sided methods reject iff `|statistic| > cutoff`, quadratic ones iff
/// `statistic > cutoff`; ties never reject. The self-normalized bound is the
/// exception: its statistic is the ratio of the margin to the summed radii
/// and it rejects at `>= 1`, matching the non-overlap rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult<F = f64> {
    pub statistic: F,
    pub cutoff: F,
    pub alpha: F,
    pub reject: bool,
    pub p_value: Option<F>,
    pub method: TestMethod,
}

impl<F: Scalar> TestResult<F> {
    pub fn two_sided(statistic: F, cutoff: F, alpha: F, method: TestMethod) -> Self {
        Self {
            statistic,
            cutoff,
            alpha,
            reject: statistic.abs() > cutoff,
            p_value: None,
            method,
        }
    }

    pub fn upper(statistic: F, cutoff: F, alpha: F, method: TestMethod) -> Self {
        Self {
            statistic,
            cutoff,
            alpha,
            reject: statistic > cutoff,
            p_value: None,
            method,
        }
    }

    pub fn with_p_value(mut self, p: F) -> Self {
        self.p_value = Some(p);
        self
    }
}

/// Two-sided test against `N(0, 1)`.
pub fn normal_test<F: Scalar>(statistic: F, alpha: F) -> TestResult<F> {
    let z = F::lit(std_normal_quantile(1.0 - alpha.as_f64() / 2.0));
    let p = F::lit(2.0 * special::std_normal_sf(statistic.as_f64().abs()));
    TestResult::two_sided(statistic, z, alpha, TestMethod::Normal).with_p_value(p)
}

/// Upper-tail test against `chi^2_df`.
pub fn chi_squared_test<F: Scalar>(statistic: F, df: usize, alpha: F) -> TestResult<F> {
    let c = F::lit(chi_squared_cutoff(df, alpha.as_f64()));
    let p = F::lit(special::chi_squared_sf(statistic.as_f64(), df as f64));
    TestResult::upper(statistic, c, alpha, TestMethod::ChiSqCombination).with_p_value(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_test_cases() {
        let r = normal_test(0.0, 0.05);
        assert_eq!(r.p_value, Some(1.0));
        assert!(!r.reject);
        let z = std_normal_quantile(0.975);
        let tie = normal_test(z, 0.05);
        assert_eq!(tie.cutoff, z);
        assert!(!tie.reject);
        let r = normal_test(3.0f64, 0.05);
        assert!(r.reject);
        assert!((r.p_value.unwrap() - 0.002_699_796_063_260_207).abs() < 1e-12);
        assert!(normal_test(-3.0, 0.05).reject);
    }

    #[test]
    fn chi_squared_test_case() {
        let r = chi_squared_test(3.9f64, 1, 0.05);
        assert!(r.reject);
        assert!((r.cutoff - 3.841_458_820_694_124).abs() < 1e-9);
        assert!(!chi_squared_test(3.8, 1, 0.05).reject);
    }
}
