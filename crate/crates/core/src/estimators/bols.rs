use serde::{Deserialize, Serialize};

use super::{arm_means, EstimateReport, EstimatorKind, Variance};
use crate::error::Invalid;
use crate::model::BatchRecord;
use crate::scalar::Scalar;

/// Within-batch least squares margin estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchEstimate<F = f64> {
    pub t: usize,
    /// `mean(arm 1) - mean(arm 0)` within the batch.
    pub delta_hat: F,
    pub n0: usize,
    pub n1: usize,
    /// Residual variance with `n - 2` degrees of freedom; present iff
    /// `n >= 3` (both arms are always pulled in a valid estimate).
    pub sigma2_hat: Option<F>,
}

impl<F: Scalar> BatchEstimate<F> {
    pub fn n(&self) -> usize {
        self.n0 + self.n1
    }

    /// `sqrt(N0 N1 / n)`.
    pub fn scale(&self) -> F {
        (F::from_count(self.n0) * F::from_count(self.n1) / F::from_count(self.n())).sqrt()
    }

    /// `sqrt(N0 N1 / (n sigma2)) * (delta_hat - null)`.
    pub fn standardized(&self, null: F, sigma2: F) -> F {
        self.scale() / sigma2.sqrt() * (self.delta_hat - null)
    }
}

struct BatchFit<F> {
    beta0: F,
    beta1: F,
}

fn fit_batch<F: Scalar>(b: &BatchRecord<F>) -> Result<BatchFit<F>, Invalid> {
    let (beta0, beta1) = arm_means(b.n0, b.reward_sum(0), b.n1, b.reward_sum(1))?;
    Ok(BatchFit { beta0, beta1 })
}

fn residual_variance<F: Scalar>(b: &BatchRecord<F>, fit: &BatchFit<F>) -> Result<F, Invalid> {
    let n = b.len();
    if n < 3 {
        return Err(Invalid::InsufficientData);
    }
    let rss = b
        .iter()
        .map(|(a, r)| {
            let e = r - if a == 1 { fit.beta1 } else { fit.beta0 };
            e * e
        })
        .fold(F::zero(), |s, x| s + x);
    Ok(rss / F::from_count(n - 2))
}

/// Margin estimate for one batch; invalid if an arm is unpulled.
pub fn bols_batch<F: Scalar>(b: &BatchRecord<F>) -> Result<BatchEstimate<F>, Invalid> {
    let fit = fit_batch(b)?;
    Ok(BatchEstimate {
        t: b.t,
        delta_hat: fit.beta1 - fit.beta0,
        n0: b.n0,
        n1: b.n1,
        sigma2_hat: residual_variance(b, &fit).ok(),
    })
}

/// `sum (R - A beta1_t - (1 - A) beta0_t)^2 / (n - 2)` within one batch.
pub fn batch_sigma2<F: Scalar>(b: &BatchRecord<F>) -> Result<F, Invalid> {
    let fit = fit_batch(b)?;
    residual_variance(b, &fit)
}

/// Per-batch estimates with degenerate batches set aside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BolsFit<F = f64> {
    pub estimates: Vec<BatchEstimate<F>>,
    /// `(t, reason)` for each excluded batch.
    pub excluded: Vec<(usize, Invalid)>,
}

impl<F: Scalar> BolsFit<F> {
    pub fn horizon(&self) -> usize {
        self.estimates.len() + self.excluded.len()
    }
}

pub fn bols_all<F: Scalar>(batches: &[BatchRecord<F>]) -> BolsFit<F> {
    let mut fit = BolsFit {
        estimates: Vec::with_capacity(batches.len()),
        excluded: Vec::new(),
    };
    for b in batches {
        match bols_batch(b) {
            Ok(e) => fit.estimates.push(e),
            Err(r) => fit.excluded.push((b.t, r)),
        }
    }
    fit
}

/// Combined BOLS statistic written as `scale * (estimate - null)`.
///
/// With per-batch weights `w_t = sqrt(N0 N1 / (n sigma_t^2))`, the estimate is
/// the `w`-weighted mean margin and `scale = sum(w_t) / sqrt(T)`, which makes
/// the statistic equal to `T^{-1/2} sum w_t (delta_t - null)`. `T` counts the
/// valid batches only.
pub fn bols_pooled_report<F: Scalar>(
    batches: &[BatchRecord<F>],
    null: F,
    variance: &Variance<F>,
) -> EstimateReport<F> {
    let kind = EstimatorKind::Bols;
    let fit = bols_all(batches);
    let mut wsum = F::zero();
    let mut wdelta = F::zero();
    let mut used = 0usize;
    for e in &fit.estimates {
        let s2 = match variance {
            Variance::Known(s) => Some(*s),
            Variance::PerBatch(v) => v.get(e.t - 1).copied(),
            Variance::Estimated => e.sigma2_hat,
        };
        let Some(s2) = s2.filter(|s| *s > F::zero()) else {
            continue;
        };
        let w = e.scale() / s2.sqrt();
        wsum = wsum + w;
        wdelta = wdelta + w * e.delta_hat;
        used += 1;
    }
    if used == 0 {
        let reason = fit.excluded.first().map(|x| x.1).unwrap_or(Invalid::DegenerateVariance);
        return EstimateReport::invalid(kind, reason);
    }
    let report = EstimateReport::new(kind, wdelta / wsum, wsum / F::from_count(used).sqrt(), null);
    if variance.is_estimated() {
        report.with_df(fit.estimates[0].n().saturating_sub(2))
    } else {
        report
    }
}
