use serde::{Deserialize, Serialize};

use super::{arm_means, EstimateReport, EstimatorKind, Variance};
use crate::error::Invalid;
use crate::model::BatchRecord;
use crate::policy::HistorySummary;
use crate::scalar::Scalar;

/// Pooled least squares fit of the two arm means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsFit<F = f64> {
    pub beta0: F,
    pub beta1: F,
    /// `beta1 - beta0`.
    pub delta: F,
    pub n0: usize,
    pub n1: usize,
}

impl<F: Scalar> OlsFit<F> {
    pub fn total(&self) -> usize {
        self.n0 + self.n1
    }
}

/// With arm indicators as regressors the normal equations decouple, so the
/// fit is the per-arm sample mean over all batches.
pub fn pooled_ols<F: Scalar>(batches: &[BatchRecord<F>]) -> Result<OlsFit<F>, Invalid> {
    let h = HistorySummary::from_batches(batches);
    let (beta0, beta1) = arm_means(h.n0, h.sum0, h.n1, h.sum1)?;
    Ok(OlsFit {
        beta0,
        beta1,
        delta: beta1 - beta0,
        n0: h.n0,
        n1: h.n1,
    })
}

fn ols_scale<F: Scalar>(fit: &OlsFit<F>, sigma2: F) -> F {
    let n0 = F::from_count(fit.n0);
    let n1 = F::from_count(fit.n1);
    (n1 * n0 / (F::from_count(fit.total()) * sigma2)).sqrt()
}

/// `sqrt(N1 N0 / (n T sigma^2)) * (delta_hat - null)`.
pub fn ols_z_statistic<F: Scalar>(batches: &[BatchRecord<F>], null: F, sigma2: F) -> Result<F, Invalid> {
    if !(sigma2 > F::zero()) {
        return Err(Invalid::DegenerateVariance);
    }
    let fit = pooled_ols(batches)?;
    Ok(ols_scale(&fit, sigma2) * (fit.delta - null))
}

/// Residual variance around the pooled arm means with `nT - 2` degrees of
/// freedom.
pub fn pooled_sigma2<F: Scalar>(batches: &[BatchRecord<F>]) -> Result<F, Invalid> {
    let fit = pooled_ols(batches)?;
    let total = fit.total();
    if total < 3 {
        return Err(Invalid::InsufficientData);
    }
    let rss = batches
        .iter()
        .flat_map(|b| b.iter())
        .map(|(a, r)| {
            let e = r - if a == 1 { fit.beta1 } else { fit.beta0 };
            e * e
        })
        .fold(F::zero(), |s, x| s + x);
    Ok(rss / F::from_count(total - 2))
}

pub fn ols_report<F: Scalar>(batches: &[BatchRecord<F>], null: F, variance: &Variance<F>) -> EstimateReport<F> {
    let kind = EstimatorKind::Ols;
    let fit = match pooled_ols(batches) {
        Ok(f) => f,
        Err(e) => return EstimateReport::invalid(kind, e),
    };
    let sigma2 = match variance.pooled() {
        Some(s) => s,
        None => match pooled_sigma2(batches) {
            Ok(s) => s,
            Err(e) => return EstimateReport::invalid(kind, e),
        },
    };
    if !(sigma2 > F::zero()) {
        return EstimateReport::invalid(kind, Invalid::DegenerateVariance);
    }
    let report = EstimateReport::new(kind, fit.delta, ols_scale(&fit, sigma2), null);
    if variance.is_estimated() {
        report.with_df(fit.total() - 2)
    } else {
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(t: usize, actions: &[u8], rewards: &[f64]) -> BatchRecord<f64> {
        BatchRecord::new(t, 0.5, actions.to_vec(), rewards.to_vec()).unwrap()
    }

    #[test]
    fn per_arm_means() {
        let b = [batch(1, &[1, 0, 1, 0], &[1.0, 2.0, 3.0, 4.0])];
        let fit = pooled_ols(&b).unwrap();
        assert_eq!((fit.beta1, fit.beta0, fit.delta), (2.0, 3.0, -1.0));
        let zero = [batch(1, &[1, 0, 1, 0], &[0.0; 4])];
        let fit = pooled_ols(&zero).unwrap();
        assert_eq!((fit.beta0, fit.beta1, fit.delta), (0.0, 0.0, 0.0));
        assert_eq!(pooled_ols(&[batch(1, &[1, 1], &[1.0, 2.0])]), Err(Invalid::EmptyArm));
    }

    #[test]
    fn location_equivariance() {
        let b = [batch(1, &[1, 0, 1, 0], &[1.0, 2.0, 3.0, 4.0])];
        let s = [b[0].shifted(10.0)];
        let (f, g) = (pooled_ols(&b).unwrap(), pooled_ols(&s).unwrap());
        assert!((g.beta0 - f.beta0 - 10.0).abs() < 1e-12);
        assert!((g.beta1 - f.beta1 - 10.0).abs() < 1e-12);
        assert!((g.delta - f.delta).abs() < 1e-12);
    }

    #[test]
    fn z_statistic_plug_in() {
        // T = 2, n = 2, N1 = N0 = 2, delta_hat = 1
        let b = [batch(1, &[1, 0], &[1.0, 0.0]), batch(2, &[1, 0], &[1.0, 0.0])];
        assert!((ols_z_statistic(&b, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(ols_z_statistic(&b, 1.0, 1.0).unwrap(), 0.0);
        let halved = ols_z_statistic(&b, 0.0, 2.0).unwrap();
        assert!((halved - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn pooled_variance() {
        let b = [batch(1, &[1, 1, 0, 0], &[1.0, 3.0, 2.0, 4.0])];
        assert_eq!(pooled_sigma2(&b).unwrap(), 2.0);
        let flat = [batch(1, &[1, 1, 0, 0], &[5.0, 5.0, 1.0, 1.0])];
        assert_eq!(pooled_sigma2(&flat).unwrap(), 0.0);
        let shifted = [b[0].shifted(-7.5)];
        assert!((pooled_sigma2(&shifted).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(pooled_sigma2(&[batch(1, &[1, 0], &[1.0, 2.0])]), Err(Invalid::InsufficientData));
    }

    #[test]
    fn report_uses_estimated_variance() {
        let b = [batch(1, &[1, 1, 0, 0], &[1.0, 3.0, 2.0, 4.0])];
        let r = ols_report(&b, 0.0, &Variance::Estimated);
        // delta = -1, scale sqrt(2*2/(4*2))
        assert!((r.statistic - (-(0.5f64).sqrt())).abs() < 1e-15);
        assert_eq!(r.df_hint, Some(2));
        let r = ols_report(&b, 0.0, &Variance::Known(1.0));
        assert_eq!(r.statistic, -1.0);
    }
}
