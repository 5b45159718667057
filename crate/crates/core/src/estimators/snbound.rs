use serde::{Deserialize, Serialize};

use super::pooled_ols;
use crate::error::Invalid;
use crate::model::BatchRecord;
use crate::scalar::Scalar;

/// Self-normalized martingale radius for an arm pulled `count` times:
/// `sqrt(sigma^2 (1 + N) / N^2 * (1 + 2 log(2 sqrt(1 + N) / delta)))`.
pub fn sn_radius<F: Scalar>(count: usize, delta: F, sigma2: F) -> F {
    let n = F::from_count(count);
    let two = F::lit(2.0);
    let one = F::one();
    (sigma2 * (one + n) / (n * n) * (one + two * (two * (one + n).sqrt() / delta).ln())).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnBoundTest<F = f64> {
    pub beta0: F,
    pub beta1: F,
    pub radius0: F,
    pub radius1: F,
    pub reject: bool,
}

impl<F: Scalar> SnBoundTest<F> {
    /// `|delta_hat - null| / (radius0 + radius1)`; the test rejects iff this
    /// is at least one.
    pub fn ratio(&self, null: F) -> F {
        ((self.beta1 - self.beta0) - null).abs() / (self.radius0 + self.radius1)
    }
}

/// Rejects `delta = 0` when the two arms' confidence intervals do not overlap.
pub fn sn_bound_test<F: Scalar>(batches: &[BatchRecord<F>], delta: F, sigma2: F) -> Result<SnBoundTest<F>, Invalid> {
    sn_bound_test_at(batches, delta, sigma2, F::zero())
}

/// Same test for `delta = null`, by shifting arm 1's interval by `null`.
pub fn sn_bound_test_at<F: Scalar>(
    batches: &[BatchRecord<F>],
    delta: F,
    sigma2: F,
    null: F,
) -> Result<SnBoundTest<F>, Invalid> {
    let fit = pooled_ols(batches)?;
    let radius0 = sn_radius(fit.n0, delta, sigma2);
    let radius1 = sn_radius(fit.n1, delta, sigma2);
    let b1 = fit.beta1 - null;
    let reject = b1 + radius1 <= fit.beta0 - radius0 || fit.beta0 + radius0 <= b1 - radius1;
    Ok(SnBoundTest {
        beta0: fit.beta0,
        beta1: fit.beta1,
        radius0,
        radius1,
        reject,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radius_plug_in() {
        let oracle = ((5.0 / 16.0) * (1.0 + 2.0 * (2.0 * 5f64.sqrt() / 0.05).ln())).sqrt();
        let r = sn_radius(4, 0.05, 1.0);
        assert!((r - oracle).abs() < 1e-14);
        assert!((r - 1.7666).abs() < 1e-4);
    }

    #[test]
    fn radius_shrinks_with_pulls() {
        assert!(sn_radius(1000, 0.05, 1.0) < sn_radius(100, 0.05, 1.0));
    }

    #[test]
    fn overlap_and_separation() {
        let same = BatchRecord::new(1, 0.5, vec![1, 0, 1, 0], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(!sn_bound_test(&[same], 0.05, 1.0).unwrap().reject);
        let n = 400;
        let actions: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let rewards: Vec<f64> = actions.iter().map(|&a| if a == 1 { 5.0 } else { 0.0 }).collect();
        let far = BatchRecord::new(1, 0.5, actions, rewards).unwrap();
        let t = sn_bound_test(std::slice::from_ref(&far), 0.05, 1.0).unwrap();
        assert!(t.reject);
        assert!(t.ratio(0.0) > 1.0);
        assert!(!sn_bound_test_at(&[far], 0.05, 1.0, 5.0).unwrap().reject);
    }

    #[test]
    fn empty_arm() {
        let b = BatchRecord::new(1, 0.5, vec![1, 1], vec![1.0, 2.0]).unwrap();
        assert_eq!(sn_bound_test(&[b], 0.05, 1.0), Err(Invalid::EmptyArm));
    }
}
