//! Distributional properties checked by simulation.

use batchinf::estimators::{batch_sigma2, bols_all, bols_batch, pooled_ols, w_decorrelated};
use batchinf::inference::{standardized_terms, t_combination_cutoff};
use batchinf::model::{generate_batch, simulate};
use batchinf::policy::{thompson_prob, HistorySummary};
use batchinf::{BatchRecord, BatchRecord32, ExperimentSpec, NoiseVariance, PolicySpec, Streams, TrendSpec, Variance};
use rayon::prelude::*;

fn spec(n: usize, horizon: usize, policy: PolicySpec<f64>) -> ExperimentSpec<f64> {
    ExperimentSpec {
        n,
        horizon,
        num_arms: 2,
        clip_lo: 0.1,
        clip_hi: 0.9,
        noise_sigma2: NoiseVariance::Constant(1.0),
        sigma_known: true,
        trend: TrendSpec::zero(),
        policy,
        seed: 0,
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

fn corr(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let c: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    c / (xs.len() - 1) as f64 / (var(xs) * var(ys)).sqrt()
}

#[test]
fn stacked_bols_terms_are_standard_and_uncorrelated() {
    for policy in [PolicySpec::thompson(), PolicySpec::epsilon_greedy(0.1), PolicySpec::ucb(None)] {
        let s = spec(500, 3, policy);
        let rows: Vec<Vec<f64>> = (0..5000u64)
            .into_par_iter()
            .map(|r| {
                let b = simulate(&s, Streams::new(3).replication(r)).unwrap().batches;
                standardized_terms(&bols_all(&b).estimates, 0.0, &Variance::Known(1.0)).unwrap()
            })
            .collect();
        let cols: Vec<Vec<f64>> = (0..3).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        for c in &cols {
            assert!(mean(c).abs() < 0.05, "{:?} mean {}", s.policy.rule, mean(c));
            assert!((var(c) - 1.0).abs() < 0.08, "{:?} var {}", s.policy.rule, var(c));
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(corr(&cols[i], &cols[j]).abs() < 0.05);
        }
    }
}

#[test]
fn batch_variance_estimate_is_consistent() {
    let median_err = |n: usize| {
        let mut errs: Vec<f64> = (0..1000u64)
            .map(|r| {
                let b = generate_batch(1, 0.5f64, (0.0, 0.0), 1.0, n, &mut Streams::new(n as u64).replication(r).rng());
                (batch_sigma2(&b).unwrap() - 1.0).abs()
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        errs[errs.len() / 2]
    };
    let (small, large) = (median_err(200), median_err(2000));
    assert!(large < 0.5 * small, "{large} vs {small}");
}

#[test]
fn thompson_second_batch_does_not_concentrate() {
    let null = spec(10_000, 1, PolicySpec::thompson());
    let mut alt = null.clone();
    alt.trend = TrendSpec::Constant { beta0: 0.0, beta1: 1.0 };
    let second = |s: &ExperimentSpec<f64>, r: u64| {
        let b = simulate(s, Streams::new(2).replication(r)).unwrap().batches;
        let h = HistorySummary::from_batches(&b);
        let raw = thompson_prob(&h, 1.0, 1.0);
        (raw, raw.clamp(s.clip_lo, s.clip_hi))
    };
    let raw: Vec<f64> = (0..2000).map(|r| second(&null, r).0).collect();
    assert!(var(&raw).sqrt() > 0.2, "sd {}", var(&raw).sqrt());
    let at_top = (0..2000).filter(|&r| second(&alt, r).1 == alt.clip_hi).count();
    assert!(at_top as f64 >= 0.95 * 2000.0, "{at_top}");
}

#[test]
fn t_cutoff_shrinks_with_batch_size() {
    let cs: Vec<f64> = [5, 10, 25, 100]
        .iter()
        .map(|&n| t_combination_cutoff(n, 5, 0.05, 1_000_000, 9).unwrap())
        .collect();
    assert!(cs.windows(2).all(|w| w[1] <= w[0]), "{cs:?}");
    assert!((cs[3] - 1.96).abs() < 0.03);
}

#[test]
fn single_precision_tracks_double() {
    let mut s = spec(50, 4, PolicySpec::thompson());
    s.trend = TrendSpec::Constant { beta0: 0.1, beta1: 0.6 };
    let b64 = simulate(&s, Streams::new(32)).unwrap().batches;
    let b32: Vec<BatchRecord32> = b64
        .iter()
        .map(|b| {
            let rewards = b.rewards.iter().map(|&r| r as f32).collect();
            BatchRecord::new(b.t, b.propensity as f32, b.actions.clone(), rewards).unwrap()
        })
        .collect();
    let close = |a: f32, b: f64| assert!((f64::from(a) - b).abs() < 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
    close(pooled_ols(&b32).unwrap().delta, pooled_ols(&b64).unwrap().delta);
    close(w_decorrelated(&b32, 1.5).unwrap().delta, w_decorrelated(&b64, 1.5).unwrap().delta);
    for (x, y) in b32.iter().zip(&b64) {
        close(bols_batch(x).unwrap().delta_hat, bols_batch(y).unwrap().delta_hat);
    }
}
