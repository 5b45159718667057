use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::plan::{Calibration, McPlan};
use super::replication::{run_replication, ReplicationContext, ReplicationOutcome};
use crate::error::{Error, Invalid, Result};
use crate::estimators::{select_lambda, EstimatorKind};
use crate::inference::{upper_quantile, CutoffCache, TestMethod};
use crate::rng::{label, Streams};

/// `sqrt(p (1 - p) / reps)`.
pub fn binomial_se(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    pub rejections: usize,
    /// Replications where the test could be carried out.
    pub valid: usize,
    /// Rejections over all replications; invalid ones count as acceptances.
    pub rejection_rate: f64,
    pub se: f64,
    /// Share of replications whose test accepts the true margin.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_se: Option<f64>,
    /// Critical value, when one fixed value was used for every replication.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cutoff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<TestMethod>,
    /// Count of each reason an estimator was invalid.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub invalid_reasons: BTreeMap<String, usize>,
}

/// Empirical null cutoff for one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedCutoff {
    pub cutoff: f64,
    /// Rejection rate of the theoretical test in the null run.
    pub null_rate: f64,
    pub null_se: f64,
    /// Whether the cutoff replaced the theoretical one.
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub calibration: Calibration,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub estimators: Vec<EstimatorSummary>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub calibrated: BTreeMap<EstimatorKind, CalibratedCutoff>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band_coverage_se: Option<f64>,
    /// Degenerate batches over all `reps * T` batches.
    pub invalid_batch_frequency: f64,
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub raw: Option<Vec<ReplicationOutcome>>,
}

impl McSummary {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }

    pub fn rate(&self, kind: EstimatorKind) -> f64 {
        self.get(kind).map_or(f64::NAN, |e| e.rejection_rate)
    }

    /// The summary with timing zeroed, for comparing runs.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
    }

    /// Per-replication statistics: `rep,estimator,valid,estimate,statistic,
    /// cutoff,reject,covered,reason`. Writes only the header when the run
    /// kept no raw output.
    pub fn write_raw_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "rep",
            "estimator",
            "valid",
            "estimate",
            "statistic",
            "cutoff",
            "reject",
            "covered",
            "reason",
        ])?;
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for rep in self.raw.iter().flatten() {
            for o in &rep.outcomes {
                let r = o.result;
                out.write_record([
                    rep.rep.to_string(),
                    o.estimator.to_string(),
                    o.valid().to_string(),
                    fmt(o.valid().then_some(o.estimate)),
                    fmt(r.map(|r| r.statistic)),
                    fmt(r.map(|r| r.cutoff)),
                    r.map(|r| r.reject.to_string()).unwrap_or_default(),
                    o.covered.map(|c| c.to_string()).unwrap_or_default(),
                    o.reason.map(|x| x.code().to_string()).unwrap_or_default(),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn run_all(ctx: &ReplicationContext<'_>, reps: usize) -> Result<Vec<ReplicationOutcome>> {
    (0..reps as u64).into_par_iter().map(|r| run_replication(ctx, r)).collect()
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => f(),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Empirical `1 - alpha` quantile of each estimator's magnitude, counting
/// invalid replications as never rejecting.
fn null_quantiles(
    outcomes: &[ReplicationOutcome],
    kinds: &[EstimatorKind],
    alpha: f64,
) -> BTreeMap<EstimatorKind, CalibratedCutoff> {
    let reps = outcomes.len();
    kinds
        .iter()
        .map(|&k| {
            let mut mags: Vec<f64> = outcomes
                .iter()
                .map(|o| o.get(k).and_then(|e| e.magnitude()).unwrap_or(f64::NEG_INFINITY))
                .collect();
            let rejections = outcomes.iter().filter(|o| o.get(k).is_some_and(|e| e.rejected())).count();
            let null_rate = rejections as f64 / reps as f64;
            let cutoff = upper_quantile(&mut mags, alpha).max(0.0);
            let c = CalibratedCutoff {
                cutoff,
                null_rate,
                null_se: binomial_se(null_rate, reps),
                applied: false,
            };
            (k, c)
        })
        .collect()
}

/// Null-run critical values: the empirical `1 - alpha` quantile of
/// `|statistic|` (the statistic itself for one-sided tests) per estimator.
pub fn calibrate_cutoffs(null_plan: &McPlan) -> Result<BTreeMap<EstimatorKind, CalibratedCutoff>> {
    calibrate_cutoffs_with(null_plan, None)
}

pub fn calibrate_cutoffs_with(
    null_plan: &McPlan,
    threads: Option<usize>,
) -> Result<BTreeMap<EstimatorKind, CalibratedCutoff>> {
    null_plan.validate()?;
    if !null_plan.is_null()? {
        return Err(Error::InvalidSpec("calibration needs a zero margin in every batch".into()));
    }
    let mut plan = null_plan.clone();
    plan.cutoffs.clear();
    plan.bands = false;
    in_pool(threads, || {
        let cache = CutoffCache::global();
        let ctx = ReplicationContext::new(&plan, cache)?;
        let outcomes = run_all(&ctx, plan.reps)?;
        Ok(null_quantiles(&outcomes, &plan.estimators, plan.alpha))
    })
}

/// Runs every replication of the plan and aggregates the results.
pub fn monte_carlo(plan: &McPlan) -> Result<McSummary> {
    monte_carlo_with(plan, None)
}

/// As [`monte_carlo`] on a pool of `threads` workers. The result does not
/// depend on the worker count.
pub fn monte_carlo_with(plan: &McPlan, threads: Option<usize>) -> Result<McSummary> {
    plan.validate()?;
    in_pool(threads, || run_plan(plan))
}

fn run_plan(plan: &McPlan) -> Result<McSummary> {
    let start = Instant::now();
    let cache = CutoffCache::global();
    let seed = plan.root_seed();
    let mut work = plan.clone();
    if work.lambda.is_none() && work.estimators.contains(&EstimatorKind::WDecorrelated) {
        work.lambda = Some(select_lambda(&work.spec, work.lambda_reps, Streams::new(seed))?);
    }

    let mut calibrated = BTreeMap::new();
    if work.calibration == Calibration::NullCalibrated {
        let mut null = work.to_null()?;
        null.reps = work.calibration_reps.unwrap_or(work.reps);
        null.cutoffs.clear();
        null.bands = false;
        let ctx = ReplicationContext::new(&null, cache)?.with_streams(Streams::new(seed).labeled(label::NULL_CALIBRATION, 0));
        let outcomes = run_all(&ctx, null.reps)?;
        calibrated = null_quantiles(&outcomes, &work.estimators, work.alpha);
        for (k, c) in calibrated.iter_mut() {
            if work.cutoffs.contains_key(k) {
                continue;
            }
            if c.null_rate > work.alpha + 2.0 * c.null_se {
                c.applied = true;
                work.cutoffs.insert(*k, c.cutoff);
            }
        }
    }

    let ctx = ReplicationContext::new(&work, cache)?;
    let outcomes = run_all(&ctx, work.reps)?;
    let reps = work.reps;

    let estimators = work
        .estimators
        .iter()
        .map(|&k| {
            let mut rejections = 0;
            let mut valid = 0;
            let mut covered = 0;
            let mut coverage_seen = false;
            let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
            let mut method = None;
            for o in outcomes.iter().filter_map(|o| o.get(k)) {
                match o.result {
                    Some(r) => {
                        valid += 1;
                        rejections += usize::from(r.reject);
                        method.get_or_insert(r.method);
                    }
                    None => {
                        let reason = o.reason.unwrap_or(Invalid::DegenerateVariance);
                        *reasons.entry(reason.code().to_string()).or_default() += 1;
                    }
                }
                if let Some(c) = o.covered {
                    coverage_seen = true;
                    covered += usize::from(c);
                }
            }
            let rate = rejections as f64 / reps as f64;
            let coverage = coverage_seen.then(|| covered as f64 / reps as f64);
            EstimatorSummary {
                estimator: k,
                rejections,
                valid,
                rejection_rate: rate,
                se: binomial_se(rate, reps),
                coverage,
                coverage_se: coverage.map(|c| binomial_se(c, reps)),
                cutoff: work.cutoffs.get(&k).copied(),
                method,
                invalid_reasons: reasons,
            }
        })
        .collect();

    let band_coverage = work.bands.then(|| {
        outcomes.iter().filter(|o| o.band_covered == Some(true)).count() as f64 / reps as f64
    });
    let excluded: usize = outcomes.iter().map(|o| o.excluded_batches).sum();

    Ok(McSummary {
        reps,
        alpha: work.alpha,
        seed,
        calibration: work.calibration,
        lambda: work.lambda,
        estimators,
        calibrated,
        band_coverage,
        band_coverage_se: band_coverage.map(|c| binomial_se(c, reps)),
        invalid_batch_frequency: excluded as f64 / (reps * work.spec.horizon) as f64,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        raw: work.raw.then_some(outcomes),
    })
}
