use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::plan::{variance_mode, McPlan};
use crate::error::{Invalid, Result};
use crate::estimators::{
    aw_aipw_report, bols_all, bols_pooled_report, ols_report, pooled_sigma2, select_lambda, sn_bound_test,
    wdecorrelated_report, BatchEstimate, BolsFit, EstimateReport, EstimatorKind, Variance,
};
use crate::inference::{
    bands_from_batches, bols_combined_statistic, chi_squared_cutoff, global_null_statistic, std_normal_quantile,
    usable_estimates, CutoffCache, TestMethod, TestResult,
};
use crate::inference::special::{chi_squared_sf, std_normal_sf};
use crate::model::{build_trend, simulate, BatchRecord};
use crate::rng::Streams;

/// Everything a replication needs besides its index.
#[derive(Debug)]
pub struct ReplicationContext<'a> {
    pub plan: &'a McPlan,
    pub variance: Variance<f64>,
    pub lambda: Option<f64>,
    /// True margin of each batch.
    pub margins: Vec<f64>,
    pub constant_margin: Option<f64>,
    /// Critical values overriding the theoretical ones.
    pub cutoffs: BTreeMap<EstimatorKind, f64>,
    pub cache: &'a CutoffCache,
    streams: Streams,
}

impl<'a> ReplicationContext<'a> {
    /// Validates the plan and selects `lambda` when the W-decorrelated
    /// estimator is requested without a fixed value.
    pub fn new(plan: &'a McPlan, cache: &'a CutoffCache) -> Result<Self> {
        plan.validate()?;
        let pairs = build_trend(&plan.spec.trend, plan.spec.horizon)?;
        let lambda = match plan.lambda {
            Some(l) => Some(l),
            None if plan.estimators.contains(&EstimatorKind::WDecorrelated) => {
                Some(select_lambda(&plan.spec, plan.lambda_reps, Streams::new(plan.root_seed()))?)
            }
            None => None,
        };
        Ok(Self {
            plan,
            variance: variance_mode(&plan.spec),
            lambda,
            margins: pairs.iter().map(|(b0, b1)| b1 - b0).collect(),
            constant_margin: plan.spec.trend.constant_margin(plan.spec.horizon),
            cutoffs: plan.cutoffs.clone(),
            cache,
            streams: Streams::new(plan.root_seed()),
        })
    }

    /// Root stream of this run; replication `r` uses `streams().replication(r)`.
    pub fn streams(&self) -> Streams {
        self.streams
    }

    pub fn with_streams(mut self, streams: Streams) -> Self {
        self.streams = streams;
        self
    }
}

/// One estimator's result in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    pub estimate: f64,
    pub result: Option<TestResult>,
    /// Whether the test fails to reject the true margin.
    pub covered: Option<bool>,
    pub reason: Option<Invalid>,
}

impl EstimatorOutcome {
    fn invalid(estimator: EstimatorKind, reason: Invalid) -> Self {
        Self {
            estimator,
            estimate: f64::NAN,
            result: None,
            covered: None,
            reason: Some(reason),
        }
    }

    pub fn valid(&self) -> bool {
        self.result.is_some()
    }

    pub fn rejected(&self) -> bool {
        self.result.is_some_and(|r| r.reject)
    }

    /// Quantity compared against the cutoff.
    pub fn magnitude(&self) -> Option<f64> {
        self.result.map(|r| magnitude(self.estimator, r.statistic))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub rep: u64,
    pub digest: u64,
    pub outcomes: Vec<EstimatorOutcome>,
    /// Batches set aside as degenerate by the per-batch estimator.
    pub excluded_batches: usize,
    pub band_covered: Option<bool>,
}

impl ReplicationOutcome {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorOutcome> {
        self.outcomes.iter().find(|o| o.estimator == kind)
    }
}

fn two_sided(kind: EstimatorKind) -> bool {
    !matches!(kind, EstimatorKind::BolsNste | EstimatorKind::SnBound)
}

fn magnitude(kind: EstimatorKind, statistic: f64) -> f64 {
    if two_sided(kind) {
        statistic.abs()
    } else {
        statistic
    }
}

/// Raw test ingredients before the cutoff is settled.
struct Eval {
    estimate: f64,
    statistic: f64,
    at_truth: Option<f64>,
    cutoff: f64,
    method: TestMethod,
    p_value: Option<f64>,
}

fn shift_to_truth(estimates: &[BatchEstimate<f64>], margins: &[f64]) -> Vec<BatchEstimate<f64>> {
    estimates
        .iter()
        .map(|e| BatchEstimate {
            delta_hat: e.delta_hat - margins[e.t - 1],
            ..*e
        })
        .collect()
}

impl ReplicationContext<'_> {
    fn normal_eval(&self, report: EstimateReport<f64>) -> std::result::Result<Eval, Invalid> {
        if !report.valid {
            return Err(report.reason.unwrap_or(Invalid::DegenerateVariance));
        }
        let alpha = self.plan.alpha;
        Ok(Eval {
            estimate: report.estimate,
            statistic: report.statistic,
            at_truth: self.constant_margin.map(|m| report.scale * (report.estimate - m)),
            cutoff: std_normal_quantile(1.0 - alpha / 2.0),
            method: TestMethod::Normal,
            p_value: Some(2.0 * std_normal_sf(report.statistic.abs())),
        })
    }

    fn usable(&self, fit: &BolsFit<f64>) -> std::result::Result<Vec<BatchEstimate<f64>>, Invalid> {
        let (keep, _) = usable_estimates(&fit.estimates, &self.variance);
        if keep.is_empty() {
            return Err(fit.excluded.first().map_or(Invalid::DegenerateVariance, |x| x.1));
        }
        if self.variance.is_estimated() && self.plan.spec.n < 4 {
            return Err(Invalid::InsufficientData);
        }
        Ok(keep)
    }

    fn bols_eval(&self, batches: &[BatchRecord<f64>], fit: &BolsFit<f64>) -> std::result::Result<Eval, Invalid> {
        let keep = self.usable(fit)?;
        let plan = self.plan;
        let stat = bols_combined_statistic(&keep, 0.0, &self.variance).map_err(|_| Invalid::DegenerateVariance)?;
        let truth = bols_combined_statistic(&shift_to_truth(&keep, &self.margins), 0.0, &self.variance).ok();
        let estimate = bols_pooled_report(batches, 0.0, &self.variance).estimate;
        let (cutoff, method, p_value) = if self.variance.is_estimated() {
            let c = self
                .cache
                .t_combination(plan.spec.n, keep.len(), plan.alpha, plan.cutoff_draws, plan.root_seed())
                .map_err(|_| Invalid::InsufficientData)?;
            (c, TestMethod::TCombination, None)
        } else {
            (
                std_normal_quantile(1.0 - plan.alpha / 2.0),
                TestMethod::Normal,
                Some(2.0 * std_normal_sf(stat.abs())),
            )
        };
        Ok(Eval {
            estimate,
            statistic: stat,
            at_truth: truth,
            cutoff,
            method,
            p_value,
        })
    }

    fn nste_eval(&self, batches: &[BatchRecord<f64>], fit: &BolsFit<f64>) -> std::result::Result<Eval, Invalid> {
        let keep = self.usable(fit)?;
        let plan = self.plan;
        let stat = global_null_statistic(&keep, 0.0, &self.variance).map_err(|_| Invalid::DegenerateVariance)?;
        let truth = global_null_statistic(&shift_to_truth(&keep, &self.margins), 0.0, &self.variance).ok();
        let estimate = bols_pooled_report(batches, 0.0, &self.variance).estimate;
        let (cutoff, p_value) = if self.variance.is_estimated() {
            let c = self
                .cache
                .global_null_t(plan.spec.n, keep.len(), plan.alpha, plan.cutoff_draws, plan.root_seed())
                .map_err(|_| Invalid::InsufficientData)?;
            (c, None)
        } else {
            (
                chi_squared_cutoff(keep.len(), plan.alpha),
                Some(chi_squared_sf(stat, keep.len() as f64)),
            )
        };
        Ok(Eval {
            estimate,
            statistic: stat,
            at_truth: truth,
            cutoff,
            method: TestMethod::ChiSqCombination,
            p_value,
        })
    }

    fn sn_eval(&self, batches: &[BatchRecord<f64>]) -> std::result::Result<Eval, Invalid> {
        let sigma2 = match self.variance.pooled() {
            Some(s) => s,
            None => pooled_sigma2(batches)?,
        };
        if !(sigma2 > 0.0) {
            return Err(Invalid::DegenerateVariance);
        }
        let sn = sn_bound_test(batches, self.plan.sn_delta(), sigma2)?;
        Ok(Eval {
            estimate: sn.beta1 - sn.beta0,
            statistic: sn.ratio(0.0),
            at_truth: self.constant_margin.map(|m| sn.ratio(m)),
            cutoff: 1.0,
            method: TestMethod::SnBound,
            p_value: None,
        })
    }

    fn evaluate(&self, kind: EstimatorKind, batches: &[BatchRecord<f64>], fit: &BolsFit<f64>) -> EstimatorOutcome {
        let eval = match kind {
            EstimatorKind::Ols => self.normal_eval(ols_report(batches, 0.0, &self.variance)),
            EstimatorKind::WDecorrelated => {
                let lambda = self.lambda.expect("lambda selected for W-decorrelated");
                self.normal_eval(wdecorrelated_report(batches, lambda, 0.0, &self.variance))
            }
            EstimatorKind::AwAipw => self.normal_eval(aw_aipw_report(batches, 0.0)),
            EstimatorKind::Bols => self.bols_eval(batches, fit),
            EstimatorKind::BolsNste => self.nste_eval(batches, fit),
            EstimatorKind::SnBound => self.sn_eval(batches),
        };
        let eval = match eval {
            Ok(e) => e,
            Err(reason) => return EstimatorOutcome::invalid(kind, reason),
        };
        let alpha = self.plan.alpha;
        let (cutoff, method, p_value) = match self.cutoffs.get(&kind) {
            Some(&c) => (c, TestMethod::NullCalibrated, None),
            None => (eval.cutoff, eval.method, eval.p_value),
        };
        // the bound rejects when the intervals merely touch
        let rejects = |s: f64| {
            let m = magnitude(kind, s);
            if method == TestMethod::SnBound {
                m >= cutoff
            } else {
                m > cutoff
            }
        };
        let result = TestResult {
            statistic: eval.statistic,
            cutoff,
            alpha,
            reject: rejects(eval.statistic),
            p_value,
            method,
        };
        EstimatorOutcome {
            estimator: kind,
            estimate: eval.estimate,
            result: Some(result),
            covered: eval.at_truth.map(|s| !rejects(s)),
            reason: None,
        }
    }
}

/// Simulates replication `rep` and evaluates every requested estimator.
/// Invalid estimators are flagged, never fatal.
pub fn run_replication(ctx: &ReplicationContext<'_>, rep: u64) -> Result<ReplicationOutcome> {
    let traj = simulate(&ctx.plan.spec, ctx.streams.replication(rep))?;
    let batches = &traj.batches;
    let fit = bols_all(batches);
    let outcomes = ctx
        .plan
        .estimators
        .iter()
        .map(|&k| ctx.evaluate(k, batches, &fit))
        .collect();
    let band_covered = ctx.plan.bands.then(|| {
        bands_from_batches(batches, ctx.plan.alpha, &ctx.variance).is_ok_and(|b| b.covers(&ctx.margins))
    });
    Ok(ReplicationOutcome {
        rep,
        digest: traj.digest(),
        outcomes,
        excluded_batches: fit.excluded.len(),
        band_covered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ExperimentSpec, NoiseVariance, TrendSpec};
    use crate::policy::{PolicyRule, PolicySpec};

    fn spec() -> ExperimentSpec<f64> {
        ExperimentSpec {
            n: 20,
            horizon: 5,
            num_arms: 2,
            clip_lo: 0.1,
            clip_hi: 0.9,
            noise_sigma2: NoiseVariance::Constant(1.0),
            sigma_known: false,
            trend: TrendSpec::Constant { beta0: 0.0, beta1: 0.3 },
            policy: PolicySpec::thompson(),
            seed: 11,
        }
    }

    fn small(plan: McPlan) -> McPlan {
        let mut p = plan;
        p.cutoff_draws = 100_000;
        p.lambda_reps = 200;
        p
    }

    #[test]
    fn noiseless_fixed_design_recovers_margin() {
        use crate::estimators::{aw_aipw_with, pooled_ols, sn_bound_test, w_decorrelated, PriorMean};
        let mut s = spec();
        s.noise_sigma2 = NoiseVariance::Constant(0.0);
        s.trend = TrendSpec::Constant { beta0: 0.5, beta1: 1.5 };
        s.policy = PolicySpec::new(PolicyRule::Fixed { prob: 0.5 });
        s.clip_lo = 0.5;
        s.clip_hi = 0.5;
        let plan = McPlan::new(s).with_estimators(&[EstimatorKind::Bols]);
        let cache = CutoffCache::new();
        let ctx = ReplicationContext::new(&plan, &cache).unwrap();
        let batches = simulate(&plan.spec, ctx.streams().replication(0)).unwrap().batches;
        let exact = |x: f64| assert!((x - 1.0).abs() < 1e-12, "{x}");
        exact(pooled_ols(&batches).unwrap().delta);
        exact(w_decorrelated(&batches, 1.0).unwrap().delta);
        exact(aw_aipw_with(&batches, PriorMean::WithinBatch).unwrap().delta);
        let sn = sn_bound_test(&batches, 0.05, 1.0).unwrap();
        exact(sn.beta1 - sn.beta0);
        for e in &bols_all(&batches).estimates {
            exact(e.delta_hat);
        }
        exact(bols_pooled_report(&batches, 0.0, &Variance::Known(1.0)).estimate);
        // residual variances are zero, so the estimated-variance test is void
        let out = run_replication(&ctx, 0).unwrap();
        assert_eq!(out.outcomes[0].reason, Some(Invalid::DegenerateVariance));
    }

    #[test]
    fn replications_are_reproducible() {
        let plan = small(McPlan::new(spec()));
        let cache = CutoffCache::new();
        let ctx = ReplicationContext::new(&plan, &cache).unwrap();
        let a = run_replication(&ctx, 7).unwrap();
        let b = run_replication(&ctx, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.digest, run_replication(&ctx, 8).unwrap().digest);
        assert_eq!(a.outcomes.len(), EstimatorKind::ALL.len());
    }

    #[test]
    fn fixed_cutoffs_override() {
        let mut plan = small(McPlan::new(spec()).with_estimators(&[EstimatorKind::Ols]));
        plan.cutoffs.insert(EstimatorKind::Ols, 0.0);
        let cache = CutoffCache::new();
        let ctx = ReplicationContext::new(&plan, &cache).unwrap();
        let o = run_replication(&ctx, 0).unwrap();
        let r = o.outcomes[0].result.unwrap();
        assert_eq!(r.method, TestMethod::NullCalibrated);
        assert!(r.reject);
    }

    #[test]
    fn estimated_variance_uses_t_cutoff() {
        let plan = small(McPlan::new(spec()).with_estimators(&[EstimatorKind::Bols, EstimatorKind::BolsNste]));
        let cache = CutoffCache::new();
        let ctx = ReplicationContext::new(&plan, &cache).unwrap();
        let o = run_replication(&ctx, 1).unwrap();
        let bols = o.get(EstimatorKind::Bols).unwrap().result.unwrap();
        assert_eq!(bols.method, TestMethod::TCombination);
        assert!(bols.cutoff > 1.96);
        assert!(!cache.is_empty());
    }
}
