//! Acceptance criteria at full scale. Each test writes one `PASS` or `FAIL`
//! line straight to stdout so the verdicts show up without `--nocapture`.

use std::io::Write;
use std::time::Instant;

use batchinf::contextual::{simulate_contextual, stacked_statistics, ContextCoefficients, ContextPolicy, ContextualSpec};
use batchinf::estimators::{bols_all, wdecorrelated_weights, wdecorrelated_weights_closed_form};
use batchinf::harness::{ks_distance_normal, monte_carlo, reproduce_figure, Calibration, FigureOptions, McPlan};
use batchinf::inference::{bols_combined_statistic, standardized_terms};
use batchinf::model::simulate;
use batchinf::{EstimatorKind, ExperimentSpec, NoiseVariance, PolicySpec, Streams, TrendSpec, Variance};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "{tag} criterion {criterion}: {detail}").unwrap();
    out.flush().unwrap();
    assert!(pass, "criterion {criterion} failed: {detail}");
}

fn spec(n: usize, horizon: usize, policy: PolicySpec<f64>, clip: (f64, f64)) -> ExperimentSpec<f64> {
    ExperimentSpec {
        n,
        horizon,
        num_arms: 2,
        clip_lo: clip.0,
        clip_hi: clip.1,
        noise_sigma2: NoiseVariance::Constant(1.0),
        sigma_known: false,
        trend: TrendSpec::zero(),
        policy,
        seed: 20_240_601,
    }
}

fn policies() -> [(&'static str, PolicySpec<f64>); 2] {
    [("thompson", PolicySpec::thompson()), ("epsilon_greedy", PolicySpec::epsilon_greedy(0.1))]
}

/// Sample covariance of the rows (population normalization by `m - 1`).
fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = rows.len() as f64;
    let k = rows[0].len();
    let mean: Vec<f64> = (0..k).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / m).collect();
    (0..k)
        .map(|a| {
            (0..k)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (m - 1.0))
                .collect()
        })
        .collect()
}

fn max_dev_from_identity(c: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in c.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - target).abs());
        }
    }
    worst
}

#[test]
fn criterion_01_bols_type1_control() {
    let mut details = Vec::new();
    let mut pass = true;
    for (label, policy) in policies() {
        for horizon in [5, 25] {
            let start = Instant::now();
            let plan = McPlan::new(spec(25, horizon, policy.clone(), (0.1, 0.9)))
                .with_estimators(&[EstimatorKind::Bols])
                .with_reps(10_000);
            let s = monte_carlo(&plan).unwrap();
            let rate = s.rate(EstimatorKind::Bols);
            let secs = start.elapsed().as_secs_f64();
            pass &= (0.040..=0.065).contains(&rate) && secs < 180.0;
            details.push(format!("{label} T={horizon} rate={rate:.4} ({secs:.1}s)"));
        }
    }
    verdict(1, pass, &details.join("; "));
}

#[test]
fn criterion_02_ols_nonnormality() {
    let mut s = spec(100, 25, PolicySpec::thompson(), (0.05, 0.95));
    s.sigma_known = true;
    let mut plan = McPlan::new(s).with_estimators(&[EstimatorKind::Ols]).with_reps(10_000);
    plan.raw = true;
    let summary = monte_carlo(&plan).unwrap();
    let z: Vec<f64> = summary
        .raw
        .as_ref()
        .unwrap()
        .iter()
        .filter_map(|o| o.outcomes[0].result.map(|r| r.statistic))
        .collect();
    let rate = summary.rate(EstimatorKind::Ols);
    let ks = ks_distance_normal(&z);
    verdict(
        2,
        rate > 0.06 && ks > 0.01 && z.len() == 10_000,
        &format!("OLS type-1 {rate:.4} (> 0.06), KS distance {ks:.4} (> 0.01) over {} samples", z.len()),
    );
}

#[test]
fn criterion_03_undercoverage() {
    let opts = FigureOptions {
        horizons: vec![25],
        ..FigureOptions::default()
    };
    let out = reproduce_figure("undercoverage_sweep", &opts).unwrap();
    let t = &out.table;
    let mut worst = (f64::INFINITY, String::new());
    for r in t.select("estimator", "ols") {
        let m = t.value(r, "margin").unwrap();
        let c = t.value(r, "coverage").unwrap();
        if m != 0.0 && c < worst.0 {
            worst = (c, format!("n={} margin={m}", r[0]));
        }
    }
    verdict(
        3,
        worst.0 < 0.945,
        &format!("lowest non-zero-margin OLS coverage {:.4} at {}", worst.0, worst.1),
    );
}

#[test]
fn criterion_04_power_ordering() {
    let mut details = Vec::new();
    let mut pass = true;
    for (label, policy) in policies() {
        let mut s = spec(25, 25, policy, (0.1, 0.9));
        s.trend = TrendSpec::Constant { beta0: 0.25, beta1: 0.0 };
        let plan = McPlan::new(s)
            .with_estimators(&[
                EstimatorKind::Bols,
                EstimatorKind::WDecorrelated,
                EstimatorKind::AwAipw,
                EstimatorKind::SnBound,
            ])
            .with_reps(10_000)
            .with_calibration(Calibration::NullCalibrated);
        let sum = monte_carlo(&plan).unwrap();
        let get = |k| sum.get(k).unwrap();
        let (aw, bols, wd, sn) = (
            get(EstimatorKind::AwAipw),
            get(EstimatorKind::Bols),
            get(EstimatorKind::WDecorrelated),
            get(EstimatorKind::SnBound),
        );
        let gap = |a: &batchinf::harness::EstimatorSummary, b: &batchinf::harness::EstimatorSummary| {
            (a.rejection_rate - b.rejection_rate) / a.se.hypot(b.se)
        };
        let ok = gap(aw, bols) > 3.0 && gap(bols, wd) > 3.0 && gap(wd, sn) > 3.0;
        pass &= ok;
        let cal: Vec<String> = sum
            .calibrated
            .iter()
            .filter(|(_, c)| c.applied)
            .map(|(k, c)| format!("{k}@{:.3}", c.cutoff))
            .collect();
        details.push(format!(
            "{label}: awaipw {:.4} bols {:.4} wdecorrelated {:.4} snbound {:.4} (gaps {:.1}/{:.1}/{:.1} SE; calibrated {})",
            aw.rejection_rate,
            bols.rejection_rate,
            wd.rejection_rate,
            sn.rejection_rate,
            gap(aw, bols),
            gap(bols, wd),
            gap(wd, sn),
            cal.join(",")
        ));
    }
    verdict(4, pass, &details.join("; "));
}

#[test]
fn criterion_05_baseline_shift_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (_, policy) = policies()[i % 2].clone();
        let mut s = spec(rng.random_range(5..60), rng.random_range(1..30), policy, (0.1, 0.9));
        s.trend = TrendSpec::Constant {
            beta0: rng.random_range(-1.0..1.0),
            beta1: rng.random_range(-1.0..1.0),
        };
        let batches = simulate(&s, Streams::new(i as u64)).unwrap().batches;
        let shifted: Vec<_> = batches.iter().map(|b| b.shifted(rng.random_range(-10.0..=10.0))).collect();
        for variance in [Variance::Known(1.0), Variance::Estimated] {
            let a = bols_combined_statistic(&bols_all(&batches).estimates, 0.0, &variance);
            let b = bols_combined_statistic(&bols_all(&shifted).estimates, 0.0, &variance);
            if let (Ok(a), Ok(b)) = (a, b) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    verdict(5, worst < 1e-10, &format!("max change {worst:.2e} over 100 trajectories"));
}

#[test]
fn criterion_06_wdecorrelated_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(1..=1000);
        let actions: Vec<u8> = (0..len).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let lambda: f64 = rng.random_range(0.0..20.0);
        let a = wdecorrelated_weights(&actions, lambda);
        let b = wdecorrelated_weights_closed_form(&actions, lambda);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x[0] - y[0]).abs()).max((x[1] - y[1]).abs());
        }
    }
    verdict(6, worst < 1e-10, &format!("max weight difference {worst:.2e}"));
}

#[test]
fn criterion_07_sn_bound_conservative() {
    let mut details = Vec::new();
    let mut worst = 0.0f64;
    for (label, policy) in policies() {
        for horizon in [2, 5, 10, 25] {
            let mut plan = McPlan::new(spec(25, horizon, policy.clone(), (0.1, 0.9)))
                .with_estimators(&[EstimatorKind::SnBound])
                .with_reps(10_000);
            plan.sn_delta = Some(0.05);
            let rate = monte_carlo(&plan).unwrap().rate(EstimatorKind::SnBound);
            worst = worst.max(rate);
            details.push(format!("{label} T={horizon} {rate:.4}"));
        }
    }
    verdict(7, worst <= 0.05, &format!("max type-1 {worst:.4}: {}", details.join(", ")));
}

#[test]
fn criterion_08_stacked_normality() {
    let margin = 0.25;
    let mut s = spec(500, 3, PolicySpec::thompson(), (0.1, 0.9));
    s.sigma_known = true;
    s.trend = TrendSpec::Constant { beta0: 0.0, beta1: margin };
    let multi: Vec<Vec<f64>> = (0..5000u64)
        .into_par_iter()
        .map(|r| {
            let b = simulate(&s, Streams::new(81).replication(r)).unwrap().batches;
            standardized_terms(&bols_all(&b).estimates, margin, &Variance::Known(1.0)).unwrap()
        })
        .collect();
    let dev_multi = max_dev_from_identity(&covariance(&multi));

    let beta = vec![vec![0.0, 0.5], vec![0.25, -0.25]];
    let cspec = ContextualSpec {
        d: 2,
        num_arms: 2,
        n: 500,
        horizon: 3,
        u: 1.0,
        noise_sigma2: 1.0,
        clip_lo: 0.1,
        clip_hi: 0.9,
        coefficients: ContextCoefficients::Constant { arms: beta.clone() },
        policy: ContextPolicy::default(),
        seed: 82,
    };
    let delta = DVector::from_iterator(2, beta[1].iter().zip(&beta[0]).map(|(a, b)| a - b));
    let deltas = vec![delta; 3];
    let ctx: Vec<Vec<f64>> = (0..5000u64)
        .into_par_iter()
        .map(|r| {
            let b = simulate_contextual(&cspec, Streams::new(82).replication(r)).unwrap();
            stacked_statistics(&b, 1, 0, &deltas, 1.0).unwrap()
        })
        .collect();
    let dev_ctx = max_dev_from_identity(&covariance(&ctx));
    verdict(
        8,
        dev_multi < 0.08 && dev_ctx < 0.08,
        &format!("max |cov - I|: multi-arm {dev_multi:.4} (3x3), contextual {dev_ctx:.4} (6x6)"),
    );
}

#[test]
fn criterion_09_band_coverage() {
    let trends = [
        ("constant", TrendSpec::Constant { beta0: 0.0, beta1: 0.25 }),
        (
            "trend",
            TrendSpec::Explicit {
                pairs: vec![(0.0, 0.5), (0.1, 0.3), (0.2, 0.1), (0.3, -0.1), (0.4, -0.3)],
            },
        ),
    ];
    let mut details = Vec::new();
    let mut pass = true;
    for (label, trend) in trends {
        let mut s = spec(500, 5, PolicySpec::thompson(), (0.1, 0.9));
        s.trend = trend;
        let mut plan = McPlan::new(s).with_estimators(&[EstimatorKind::Bols]).with_reps(10_000);
        plan.bands = true;
        let cov = monte_carlo(&plan).unwrap().band_coverage.unwrap();
        pass &= cov >= 0.94;
        details.push(format!("{label} {cov:.4}"));
    }
    verdict(9, pass, &format!("joint coverage: {}", details.join(", ")));
}

#[test]
fn criterion_10_count_ratio() {
    let mut s = spec(10_000, 5, PolicySpec::thompson(), (0.1, 0.9));
    s.trend = TrendSpec::Constant { beta0: 0.0, beta1: 0.25 };
    let good = (0..1000u64)
        .into_par_iter()
        .filter(|&r| {
            let b = simulate(&s, Streams::new(10).replication(r)).unwrap().batches;
            b.iter().all(|x| {
                let ratio = x.count(1) as f64 / (x.len() as f64 * x.propensity);
                (ratio - 1.0).abs() < 0.1
            })
        })
        .count();
    let share = good as f64 / 1000.0;
    verdict(10, share >= 0.99, &format!("{share:.3} of reps within 0.1 in every batch"));
}
