//! Adaptively weighted augmented inverse propensity weighting.
//!
//! Scores for batch `t` augment the IPW term with the arm's running mean over
//! batches `1..t-1`; scores are averaged with variance-stabilizing weights
//! `sqrt(pi_t)` (arm 1) and `sqrt(1 - pi_t)` (arm 0).

use serde::{Deserialize, Serialize};

use super::{EstimateReport, EstimatorKind};
use crate::error::Invalid;
use crate::model::BatchRecord;
use crate::scalar::Scalar;

/// Augmentation value used when an arm has no pulls in earlier batches
/// (always the case at `t = 1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMean {
    #[default]
    Zero,
    /// The arm's mean within the current batch (zero if unpulled there too).
    WithinBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwAipwFit<F = f64> {
    pub beta1: F,
    pub beta0: F,
    pub delta: F,
    pub v1: F,
    pub v0: F,
    /// Cross term, already carrying its minus sign.
    pub c01: F,
}

impl<F: Scalar> AwAipwFit<F> {
    /// `V0 + V1 + 2 C01`.
    pub fn variance(&self) -> F {
        self.v0 + self.v1 + F::lit(2.0) * self.c01
    }
}

/// Per-observation scores `(Y_1, Y_0)` in time order.
pub fn aw_aipw_scores<F: Scalar>(batches: &[BatchRecord<F>], fallback: PriorMean) -> Result<Vec<(F, F)>, Invalid> {
    let mut sums = [F::zero(); 2];
    let mut counts = [0usize; 2];
    let mut out = Vec::with_capacity(batches.iter().map(|b| b.len()).sum());
    for b in batches {
        let pi = b.propensity;
        if !(pi > F::zero() && pi < F::one()) {
            return Err(Invalid::BoundaryPropensity);
        }
        let prior = |k: usize| {
            if counts[k] > 0 {
                sums[k] / F::from_count(counts[k])
            } else {
                match fallback {
                    PriorMean::Zero => F::zero(),
                    PriorMean::WithinBatch => {
                        let c = b.count(k as u8);
                        if c > 0 {
                            b.reward_sum(k as u8) / F::from_count(c)
                        } else {
                            F::zero()
                        }
                    }
                }
            }
        };
        let (m0, m1) = (prior(0), prior(1));
        for (a, r) in b.iter() {
            let ipw1 = if a == 1 { F::one() / pi } else { F::zero() };
            let ipw0 = if a == 0 { F::one() / (F::one() - pi) } else { F::zero() };
            let y1 = ipw1 * r + (F::one() - ipw1) * m1;
            let y0 = ipw0 * r + (F::one() - ipw0) * m0;
            out.push((y1, y0));
        }
        for (a, r) in b.iter() {
            let k = usize::from(a);
            sums[k] = sums[k] + r;
            counts[k] += 1;
        }
    }
    Ok(out)
}

pub fn aw_aipw<F: Scalar>(batches: &[BatchRecord<F>]) -> Result<AwAipwFit<F>, Invalid> {
    aw_aipw_with(batches, PriorMean::Zero)
}

pub fn aw_aipw_with<F: Scalar>(batches: &[BatchRecord<F>], fallback: PriorMean) -> Result<AwAipwFit<F>, Invalid> {
    if batches.iter().all(|b| b.is_empty()) {
        return Err(Invalid::InsufficientData);
    }
    let scores = aw_aipw_scores(batches, fallback)?;
    // per observation: (sqrt(pi), sqrt(1 - pi), pi)
    let weights: Vec<(F, F, F)> = batches
        .iter()
        .flat_map(|b| {
            let pi = b.propensity;
            std::iter::repeat_n((pi.sqrt(), (F::one() - pi).sqrt(), pi), b.len())
        })
        .collect();

    let mut sw1 = F::zero();
    let mut sw0 = F::zero();
    let mut num1 = F::zero();
    let mut num0 = F::zero();
    for (&(y1, y0), &(w1, w0, _)) in scores.iter().zip(&weights) {
        sw1 = sw1 + w1;
        sw0 = sw0 + w0;
        num1 = num1 + w1 * y1;
        num0 = num0 + w0 * y0;
    }
    let beta1 = num1 / sw1;
    let beta0 = num0 / sw0;

    let mut s1 = F::zero();
    let mut s0 = F::zero();
    let mut s01 = F::zero();
    for (&(y1, y0), &(w1, w0, pi)) in scores.iter().zip(&weights) {
        let d1 = y1 - beta1;
        let d0 = y0 - beta0;
        s1 = s1 + pi * d1 * d1;
        s0 = s0 + (F::one() - pi) * d0 * d0;
        s01 = s01 + w1 * w0 * d1 * d0;
    }
    Ok(AwAipwFit {
        beta1,
        beta0,
        delta: beta1 - beta0,
        v1: s1 / (sw1 * sw1),
        v0: s0 / (sw0 * sw0),
        c01: -s01 / (sw1 * sw0),
    })
}

/// `(delta_hat - null) / sqrt(V0 + V1 + 2 C01)`.
pub fn aw_aipw_report<F: Scalar>(batches: &[BatchRecord<F>], null: F) -> EstimateReport<F> {
    let kind = EstimatorKind::AwAipw;
    match aw_aipw(batches) {
        Ok(fit) => {
            let v = fit.variance();
            if v > F::zero() {
                EstimateReport::new(kind, fit.delta, F::one() / v.sqrt(), null)
            } else {
                EstimateReport::invalid(kind, Invalid::DegenerateVariance)
            }
        }
        Err(e) => EstimateReport::invalid(kind, e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(t: usize, pi: f64, actions: &[u8], rewards: &[f64]) -> BatchRecord<f64> {
        BatchRecord::new(t, pi, actions.to_vec(), rewards.to_vec()).unwrap()
    }

    #[test]
    fn second_batch_scores() {
        let bs = [batch(1, 0.5, &[1, 0], &[2.0, 0.0]), batch(2, 0.5, &[1, 0], &[4.0, 0.0])];
        let y = aw_aipw_scores(&bs, PriorMean::Zero).unwrap();
        assert_eq!(y[2].0, 6.0);
        assert_eq!(y[3].0, 2.0);
        // first batch augments with zero
        assert_eq!(y[0].0, 4.0);
        assert_eq!(y[1].0, 0.0);
    }

    #[test]
    fn constant_rewards() {
        let c = 1.75;
        let bs: Vec<_> = (1..=3).map(|t| batch(t, 0.5, &[1, 0, 1, 0], &[c; 4])).collect();
        let fit = aw_aipw(&bs).unwrap();
        // Y scores at t=1 use a zero prior mean, so only later batches are exact;
        // with pi = 1/2 the IPW terms still average to c within each batch.
        assert!((fit.beta1 - c).abs() < 1e-12);
        assert!((fit.beta0 - c).abs() < 1e-12);
        assert!(fit.delta.abs() < 1e-12);
    }

    #[test]
    fn uniform_weights_reduce_to_mean() {
        let bs = [
            batch(1, 0.3, &[1, 0, 0, 1], &[1.0, -0.5, 0.2, 2.0]),
            batch(2, 0.3, &[0, 0, 1, 0], &[0.1, 0.4, -1.0, 0.0]),
        ];
        let y = aw_aipw_scores(&bs, PriorMean::Zero).unwrap();
        let mean1 = y.iter().map(|p| p.0).sum::<f64>() / y.len() as f64;
        let mean0 = y.iter().map(|p| p.1).sum::<f64>() / y.len() as f64;
        let fit = aw_aipw(&bs).unwrap();
        assert!((fit.beta1 - mean1).abs() < 1e-14);
        assert!((fit.beta0 - mean0).abs() < 1e-14);
    }

    #[test]
    fn variance_formula() {
        let bs = [
            batch(1, 0.5, &[1, 0, 1], &[1.0, 0.0, 3.0]),
            batch(2, 0.8, &[1, 1, 0], &[2.0, 1.0, -1.0]),
        ];
        let fit = aw_aipw(&bs).unwrap();
        // brute-force recomputation of the three sums
        let y = aw_aipw_scores(&bs, PriorMean::Zero).unwrap();
        let pis = [0.5, 0.5, 0.5, 0.8, 0.8, 0.8];
        let sw1: f64 = pis.iter().map(|p: &f64| p.sqrt()).sum();
        let sw0: f64 = pis.iter().map(|p: &f64| (1.0 - p).sqrt()).sum();
        let mut v1 = 0.0;
        let mut v0 = 0.0;
        let mut c = 0.0;
        for (i, p) in pis.iter().enumerate() {
            v1 += p * (y[i].0 - fit.beta1).powi(2);
            v0 += (1.0 - p) * (y[i].1 - fit.beta0).powi(2);
            c += (p * (1.0 - p)).sqrt() * (y[i].0 - fit.beta1) * (y[i].1 - fit.beta0);
        }
        let want = v1 / sw1.powi(2) + v0 / sw0.powi(2) - 2.0 * c / (sw1 * sw0);
        assert!((fit.variance() - want).abs() < 1e-14);
    }

    #[test]
    fn within_batch_fallback() {
        let bs = [batch(1, 0.5, &[1, 0], &[2.0, 6.0])];
        let y = aw_aipw_scores(&bs, PriorMean::WithinBatch).unwrap();
        // Y_1 for the arm-0 sample: (1 - 0) * mean1 = 2
        assert_eq!(y[1].0, 2.0);
        assert_eq!(y[0].1, 6.0);
    }

    #[test]
    fn boundary_propensity_is_invalid() {
        let bs = [batch(1, 1.0, &[1, 1], &[2.0, 6.0])];
        assert_eq!(aw_aipw(&bs), Err(Invalid::BoundaryPropensity));
    }
}
