//! Decorrelated least squares with a recursively built weight matrix.
//!
//! Observations are flattened in time order (batch 1 sample 1, ..., batch T
//! sample n). Column `i` of `W` only depends on regressors up to `i`, which
//! keeps `W * noise` a martingale; `lambda` trades the remaining bias
//! `(I - W X)(beta_ols - beta)` against the variance `sigma^2 W W'`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pooled_ols, pooled_sigma2, EstimateReport, EstimatorKind, Variance};
use crate::error::{Error, Invalid, Result};
use crate::model::{simulate, BatchRecord, ExperimentSpec};
use crate::rng::{label, Streams};
use crate::scalar::Scalar;

type Mat2<F> = [[F; 2]; 2];

/// Weights `[W_0i, W_1i]` from the ridge recursion
/// `W_i = (I - sum_{j<i} W_j x_j') x_i / (lambda + |x_i|^2)` with
/// `x_i = [1 - A_i, A_i]`.
pub fn wdecorrelated_weights<F: Scalar>(actions: &[u8], lambda: F) -> Vec<[F; 2]> {
    let mut acc: Mat2<F> = [[F::zero(); 2]; 2];
    let mut out = Vec::with_capacity(actions.len());
    for &a in actions {
        let x = if a == 1 { [F::zero(), F::one()] } else { [F::one(), F::zero()] };
        let norm2 = x[0] * x[0] + x[1] * x[1];
        let denom = lambda + norm2;
        let mut w = [F::zero(); 2];
        for (r, wr) in w.iter_mut().enumerate() {
            let mut s = F::zero();
            for (c, xc) in x.iter().enumerate() {
                let ident = if r == c { F::one() } else { F::zero() };
                s = s + (ident - acc[r][c]) * *xc;
            }
            *wr = s / denom;
        }
        for r in 0..2 {
            for c in 0..2 {
                acc[r][c] = acc[r][c] + w[r] * x[c];
            }
        }
        out.push(w);
    }
    out
}

/// Two-arm closed form: `W_ki = r 1{A_i = k} (1 - r)^{N_k,i-1}`,
/// `r = 1 / (lambda + 1)`, where `N_k,i-1` counts earlier pulls of arm `k`.
pub fn wdecorrelated_weights_closed_form<F: Scalar>(actions: &[u8], lambda: F) -> Vec<[F; 2]> {
    let r = F::one() / (lambda + F::one());
    let keep = F::one() - r;
    let mut pulls = [0i32; 2];
    actions
        .iter()
        .map(|&a| {
            let k = usize::from(a);
            let mut w = [F::zero(); 2];
            w[k] = r * keep.powi(pulls[k]);
            pulls[k] += 1;
            w
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WDecorrelatedFit<F = f64> {
    pub beta0: F,
    pub beta1: F,
    pub delta: F,
    /// `sum_i W_0i^2`.
    pub sum_sq_w0: F,
    /// `sum_i W_1i^2`.
    pub sum_sq_w1: F,
}

impl<F: Scalar> WDecorrelatedFit<F> {
    /// Per-arm variance proxies `sigma^2 sum W_k^2`.
    pub fn variance_proxy(&self, sigma2: F) -> (F, F) {
        (sigma2 * self.sum_sq_w0, sigma2 * self.sum_sq_w1)
    }
}

/// `beta_d = beta_ols + W (R - X beta_ols)`.
pub fn w_decorrelated<F: Scalar>(batches: &[BatchRecord<F>], lambda: F) -> std::result::Result<WDecorrelatedFit<F>, Invalid> {
    let ols = pooled_ols(batches)?;
    let actions: Vec<u8> = batches.iter().flat_map(|b| b.actions.iter().copied()).collect();
    let weights = wdecorrelated_weights(&actions, lambda);
    let mut corr = [F::zero(); 2];
    let mut sq = [F::zero(); 2];
    for (w, (a, r)) in weights.iter().zip(batches.iter().flat_map(|b| b.iter())) {
        let resid = r - if a == 1 { ols.beta1 } else { ols.beta0 };
        for k in 0..2 {
            corr[k] = corr[k] + w[k] * resid;
            sq[k] = sq[k] + w[k] * w[k];
        }
    }
    let beta0 = ols.beta0 + corr[0];
    let beta1 = ols.beta1 + corr[1];
    Ok(WDecorrelatedFit {
        beta0,
        beta1,
        delta: beta1 - beta0,
        sum_sq_w0: sq[0],
        sum_sq_w1: sq[1],
    })
}

/// Normal-referenced report; an estimated variance reuses the pooled
/// residual variance of the OLS fit.
pub fn wdecorrelated_report<F: Scalar>(
    batches: &[BatchRecord<F>],
    lambda: F,
    null: F,
    variance: &Variance<F>,
) -> EstimateReport<F> {
    let kind = EstimatorKind::WDecorrelated;
    let fit = match w_decorrelated(batches, lambda) {
        Ok(f) => f,
        Err(e) => return EstimateReport::invalid(kind, e),
    };
    let sigma2 = match variance.pooled().map(Ok).unwrap_or_else(|| pooled_sigma2(batches)) {
        Ok(s) => s,
        Err(e) => return EstimateReport::invalid(kind, e),
    };
    let (v0, v1) = fit.variance_proxy(sigma2);
    let v = v0 + v1;
    if !(v > F::zero()) {
        return EstimateReport::invalid(kind, Invalid::DegenerateVariance);
    }
    EstimateReport::new(kind, fit.delta, F::one() / v.sqrt(), null)
}

/// Empirical `1/(nT)` quantile of `lambda_min(X'X) / log(nT)` over `reps`
/// simulated null trajectories. For arm-indicator regressors
/// `lambda_min(X'X) = min(N_0, N_1)`.
pub fn select_lambda<F: Scalar>(spec: &ExperimentSpec<F>, reps: usize, streams: Streams) -> Result<F> {
    if reps < 100 {
        return Err(Error::InvalidArgument("select_lambda needs at least 100 replications".into()));
    }
    let null = spec.to_null()?;
    let total = spec.total();
    let log_total = (total as f64).ln();
    let mut ratios: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let traj = simulate(&null, streams.labeled(label::LAMBDA, rep))?;
            let n1: usize = traj.batches.iter().map(|b| b.n1).sum();
            let n0 = total - n1;
            Ok(n0.min(n1) as f64 / log_total)
        })
        .collect::<Result<Vec<_>>>()?;
    ratios.sort_by(f64::total_cmp);
    let q = 1.0 / total as f64;
    let idx = ((q * reps as f64).ceil() as usize).clamp(1, reps) - 1;
    Ok(F::lit(ratios[idx]))
}
