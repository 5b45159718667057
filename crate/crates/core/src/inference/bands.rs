use std::io::Write;

use serde::{Deserialize, Serialize};

use super::combine::usable_estimates;
use super::special::std_normal_quantile;
use crate::error::{Error, Result};
use crate::estimators::{bols_all, BatchEstimate, Variance};
use crate::model::BatchRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band<F = f64> {
    pub t: usize,
    pub lo: F,
    pub hi: F,
}

impl<F: Scalar> Band<F> {
    pub fn width(&self) -> F {
        self.hi - self.lo
    }

    pub fn contains(&self, x: F) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Bonferroni-corrected per-batch margin intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet<F = f64> {
    pub alpha: F,
    /// `z_{1 - alpha / (2T)}` with `T` the number of intervals.
    pub z: F,
    pub intervals: Vec<Band<F>>,
    /// Batches left out (degenerate or without a usable variance).
    pub excluded: Vec<usize>,
}

impl<F: Scalar> BandSet<F> {
    /// Whether every interval contains its margin; `margins[t - 1]` is the
    /// true margin of batch `t`.
    pub fn covers(&self, margins: &[F]) -> bool {
        self.intervals.iter().all(|b| b.contains(margins[b.t - 1]))
    }

    /// Writes `t,lo,hi` rows with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t", "lo", "hi"])?;
        for b in &self.intervals {
            out.write_record([b.t.to_string(), b.lo.to_string(), b.hi.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `delta_t +- z_{1 - alpha/(2T)} sqrt(sigma_t^2 n / (N0 N1))` over the
/// estimates that have a usable variance; `T` counts those only.
pub fn simultaneous_bands<F: Scalar>(
    estimates: &[BatchEstimate<F>],
    alpha: F,
    variance: &Variance<F>,
) -> Result<BandSet<F>> {
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (keep, excluded) = usable_estimates(estimates, variance);
    if keep.is_empty() {
        return Err(Error::NoValidBatches);
    }
    let horizon = keep.len() as f64;
    let z = F::lit(std_normal_quantile(1.0 - alpha.as_f64() / (2.0 * horizon)));
    let intervals = keep
        .iter()
        .map(|e| {
            let s2 = match variance {
                Variance::Known(s) => *s,
                Variance::PerBatch(v) => v[e.t - 1],
                Variance::Estimated => e.sigma2_hat.expect("filtered"),
            };
            let half = z * s2.sqrt() / e.scale();
            Band {
                t: e.t,
                lo: e.delta_hat - half,
                hi: e.delta_hat + half,
            }
        })
        .collect();
    Ok(BandSet {
        alpha,
        z,
        intervals,
        excluded,
    })
}

/// Bands straight from logged batches; degenerate batches are flagged in
/// `excluded` alongside those without a usable variance.
pub fn bands_from_batches<F: Scalar>(
    batches: &[BatchRecord<F>],
    alpha: F,
    variance: &Variance<F>,
) -> Result<BandSet<F>> {
    let fit = bols_all(batches);
    let mut set = simultaneous_bands(&fit.estimates, alpha, variance)?;
    set.excluded.extend(fit.excluded.iter().map(|(t, _)| *t));
    set.excluded.sort_unstable();
    Ok(set)
}
