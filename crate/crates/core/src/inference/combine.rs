use crate::error::{Error, Result};
use crate::estimators::{BatchEstimate, Variance};
use crate::scalar::Scalar;

fn variance_for<F: Scalar>(e: &BatchEstimate<F>, variance: &Variance<F>) -> Option<F> {
    match variance {
        Variance::Known(s) => Some(*s),
        Variance::PerBatch(v) => v.get(e.t - 1).copied(),
        Variance::Estimated => e.sigma2_hat,
    }
    .filter(|s| *s > F::zero())
}

/// Splits estimates into those with a usable (positive) variance and the
/// indices `t` of the rest.
pub fn usable_estimates<F: Scalar>(
    estimates: &[BatchEstimate<F>],
    variance: &Variance<F>,
) -> (Vec<BatchEstimate<F>>, Vec<usize>) {
    let mut keep = Vec::with_capacity(estimates.len());
    let mut drop = Vec::new();
    for e in estimates {
        if variance_for(e, variance).is_some() {
            keep.push(*e);
        } else {
            drop.push(e.t);
        }
    }
    (keep, drop)
}

/// Per-batch `sqrt(N0 N1 / (n sigma_t^2)) (delta_t - null)`.
pub fn standardized_terms<F: Scalar>(estimates: &[BatchEstimate<F>], null: F, variance: &Variance<F>) -> Result<Vec<F>> {
    if estimates.is_empty() {
        return Err(Error::NoValidBatches);
    }
    estimates
        .iter()
        .map(|e| {
            variance_for(e, variance)
                .map(|s2| e.standardized(null, s2))
                .ok_or_else(|| Error::InvalidArgument(format!("batch {} has no positive variance", e.t)))
        })
        .collect()
}

/// `T^{-1/2} sum_t sqrt(N0 N1 / (n sigma_t^2)) (delta_t - null)` over the
/// supplied (valid) batches.
pub fn bols_combined_statistic<F: Scalar>(estimates: &[BatchEstimate<F>], null: F, variance: &Variance<F>) -> Result<F> {
    let terms = standardized_terms(estimates, null, variance)?;
    let sum = terms.iter().fold(F::zero(), |a, &b| a + b);
    Ok(sum / F::from_count(terms.len()).sqrt())
}

/// Known variance: `sum_t N0 N1 / (sigma^2 n) (delta_t - null)^2`, which is
/// `chi^2_T` under the global null. Estimated variance: the mean of squared
/// per-batch t-statistics, referenced to a simulated cutoff.
pub fn global_null_statistic<F: Scalar>(estimates: &[BatchEstimate<F>], null: F, variance: &Variance<F>) -> Result<F> {
    let terms = standardized_terms(estimates, null, variance)?;
    let ss = terms.iter().fold(F::zero(), |a, &b| a + b * b);
    Ok(if variance.is_estimated() {
        ss / F::from_count(terms.len())
    } else {
        ss
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::bols_all;
    use crate::inference::simultaneous_bands;
    use crate::model::BatchRecord;
    use proptest::prelude::*;

    fn est(t: usize, delta_hat: f64, n0: usize, n1: usize, s2: Option<f64>) -> BatchEstimate<f64> {
        BatchEstimate {
            t,
            delta_hat,
            n0,
            n1,
            sigma2_hat: s2,
        }
    }

    #[test]
    fn combined_examples() {
        let all_c: Vec<_> = (1..=3).map(|t| est(t, 0.7, 5, 5, Some(1.0))).collect();
        assert_eq!(bols_combined_statistic(&all_c, 0.7, &Variance::Known(1.0)).unwrap(), 0.0);
        // n0 = n1 = 2 gives scale 1
        let one = [est(1, 2.0, 2, 2, None)];
        assert_eq!(bols_combined_statistic(&one, 0.0, &Variance::Known(1.0)).unwrap(), 2.0);
        let four: Vec<_> = (1..=4).map(|t| est(t, 1.0, 2, 2, None)).collect();
        assert_eq!(bols_combined_statistic(&four, 0.0, &Variance::Known(1.0)).unwrap(), 2.0);
        assert!(matches!(
            bols_combined_statistic::<f64>(&[], 0.0, &Variance::Known(1.0)),
            Err(Error::NoValidBatches)
        ));
    }

    #[test]
    fn estimated_variance_per_term() {
        let e = [est(1, 1.0, 2, 2, Some(4.0)), est(2, 1.0, 2, 2, Some(1.0))];
        let s = bols_combined_statistic(&e, 0.0, &Variance::Estimated).unwrap();
        assert!((s - (0.5 + 1.0) / 2f64.sqrt()).abs() < 1e-15);
        let per = Variance::PerBatch(vec![4.0, 1.0]);
        assert_eq!(bols_combined_statistic(&e, 0.0, &per).unwrap(), s);
        let missing = [est(1, 1.0, 2, 2, None)];
        assert!(bols_combined_statistic(&missing, 0.0, &Variance::Estimated).is_err());
        let (keep, drop) = usable_estimates(&[e[0], missing[0]], &Variance::Estimated);
        assert_eq!((keep.len(), drop), (1, vec![1]));
    }

    #[test]
    fn global_null_examples() {
        let zeros: Vec<_> = (1..=3).map(|t| est(t, 0.0, 4, 6, Some(2.0))).collect();
        assert_eq!(global_null_statistic(&zeros, 0.0, &Variance::Known(1.0)).unwrap(), 0.0);
        let one = [est(1, 0.8, 3, 7, Some(1.3))];
        for v in [Variance::Known(1.3), Variance::Estimated] {
            let z = bols_combined_statistic(&one, 0.0, &v).unwrap();
            let q = global_null_statistic(&one, 0.0, &v).unwrap();
            assert!((q - z * z).abs() < 1e-14);
        }
    }

    fn arb_trajectory() -> impl Strategy<Value = Vec<BatchRecord<f64>>> {
        proptest::collection::vec(
            (6usize..30).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0u8..=1, n),
                    proptest::collection::vec(-3.0f64..3.0, n),
                )
            }),
            1..8,
        )
        .prop_map(|bs| {
            bs.into_iter()
                .enumerate()
                .map(|(i, (a, r))| BatchRecord::new(i + 1, 0.5, a, r).unwrap())
                .collect()
        })
    }

    proptest! {
        #[test]
        fn baseline_shifts_change_nothing(
            batches in arb_trajectory(),
            shifts in proptest::collection::vec(-10.0f64..10.0, 8),
        ) {
            let moved: Vec<_> = batches.iter().zip(&shifts).map(|(b, &c)| b.shifted(c)).collect();
            let (a, b) = (bols_all(&batches).estimates, bols_all(&moved).estimates);
            for v in [Variance::Known(1.0), Variance::Estimated] {
                let pairs = [
                    (bols_combined_statistic(&a, 0.0, &v), bols_combined_statistic(&b, 0.0, &v)),
                    (global_null_statistic(&a, 0.0, &v), global_null_statistic(&b, 0.0, &v)),
                ];
                for (x, y) in pairs {
                    match (x, y) {
                        (Ok(x), Ok(y)) => prop_assert!((x - y).abs() < 1e-12 * (1.0 + x.abs())),
                        (Err(_), Err(_)) => {}
                        _ => prop_assert!(false, "validity changed under a shift"),
                    }
                }
                if let (Ok(p), Ok(q)) = (simultaneous_bands(&a, 0.05, &v), simultaneous_bands(&b, 0.05, &v)) {
                    for (x, y) in p.intervals.iter().zip(&q.intervals) {
                        prop_assert!((x.width() - y.width()).abs() < 1e-12 * (1.0 + x.width()));
                    }
                }
            }
        }
    }
}
