use std::collections::HashMap;
use std::sync::{OnceLock, RwLock};

use rand_distr::{Distribution, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::special::chi_squared_quantile;
use crate::error::{Error, Result};
use crate::rng::{label, Streams};

pub const DEFAULT_CUTOFF_DRAWS: usize = 1_000_000;
const MIN_DRAWS: usize = 100_000;
const CHUNK: usize = 1 << 14;

/// Upper `alpha` critical value of a sample: the smallest order statistic `c`
/// with at most `floor(alpha m)` values strictly above it. `alpha = 1` gives 0.
///
/// Intended for nonnegative statistics (absolute values, squares).
pub fn upper_quantile(values: &mut [f64], alpha: f64) -> f64 {
    let m = values.len();
    if m == 0 {
        return f64::NAN;
    }
    let k = ((alpha * m as f64) + 1e-9).floor() as usize;
    if k >= m {
        return 0.0;
    }
    let (_, c, _) = values.select_nth_unstable_by(m - k - 1, f64::total_cmp);
    *c
}

/// Upper `alpha` quantile of `chi^2_df`.
pub fn chi_squared_cutoff(df: usize, alpha: f64) -> f64 {
    chi_squared_quantile(1.0 - alpha, df as f64)
}

fn check(n: usize, horizon: usize, alpha: f64, draws: usize) -> Result<()> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!("Student-t cutoffs need n >= 4, got {n}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if draws < MIN_DRAWS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_DRAWS} draws, got {draws}")));
    }
    Ok(())
}

/// Simulates `draws` values of `stat(Y_1..Y_T)` with `Y_t` i.i.d. `t_{n-2}`.
/// Work is split into fixed chunks with their own streams, so the sample does
/// not depend on the thread count.
fn simulate_t<S>(n: usize, horizon: usize, draws: usize, seed: u64, stat: S) -> Vec<f64>
where
    S: Fn(&[f64]) -> f64 + Sync,
{
    let dist = StudentT::new((n - 2) as f64).expect("df >= 2");
    let root = Streams::new(seed);
    let chunks = draws.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = root.labeled(label::CUTOFF, c as u64).rng();
            let len = CHUNK.min(draws - c * CHUNK);
            let mut ys = vec![0.0; horizon];
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                for y in ys.iter_mut() {
                    *y = dist.sample(&mut rng);
                }
                out.push(stat(&ys));
            }
            out
        })
        .collect()
}

/// `c` with `P(|T^{-1/2} sum Y_t| > c) = alpha`, `Y_t ~ t_{n-2}` i.i.d.
pub fn t_combination_cutoff(n: usize, horizon: usize, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
    check(n, horizon, alpha, draws)?;
    let root_t = (horizon as f64).sqrt();
    let mut s = simulate_t(n, horizon, draws, seed, |ys| (ys.iter().sum::<f64>() / root_t).abs());
    Ok(upper_quantile(&mut s, alpha))
}

/// `c` with `P(T^{-1} sum Y_t^2 > c) = alpha`, `Y_t ~ t_{n-2}` i.i.d.
pub fn global_null_t_cutoff(n: usize, horizon: usize, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
    check(n, horizon, alpha, draws)?;
    let t = horizon as f64;
    let mut s = simulate_t(n, horizon, draws, seed, |ys| ys.iter().map(|y| y * y).sum::<f64>() / t);
    Ok(upper_quantile(&mut s, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffKind {
    TCombination,
    GlobalNullT,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CutoffKey {
    pub kind: CutoffKind,
    pub n: usize,
    pub horizon: usize,
    alpha_bits: u64,
    pub draws: usize,
    pub seed: u64,
}

impl CutoffKey {
    pub fn new(kind: CutoffKind, n: usize, horizon: usize, alpha: f64, draws: usize, seed: u64) -> Self {
        Self {
            kind,
            n,
            horizon,
            alpha_bits: alpha.to_bits(),
            draws,
            seed,
        }
    }

    pub fn alpha(&self) -> f64 {
        f64::from_bits(self.alpha_bits)
    }
}

/// Memoised Monte Carlo cutoffs, safe to share between worker threads.
///
/// Two threads asking for the same missing key may both compute it; the
/// results are identical, so whichever insert lands last is harmless.
#[derive(Debug, Default)]
pub struct CutoffCache {
    map: RwLock<HashMap<CutoffKey, f64>>,
}

impl CutoffCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide cache.
    pub fn global() -> &'static CutoffCache {
        static CACHE: OnceLock<CutoffCache> = OnceLock::new();
        CACHE.get_or_init(CutoffCache::new)
    }

    pub fn get(&self, key: &CutoffKey) -> Option<f64> {
        self.map.read().expect("cutoff cache poisoned").get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cutoff cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(&self, key: CutoffKey) -> Result<f64> {
        if let Some(c) = self.get(&key) {
            return Ok(c);
        }
        let c = match key.kind {
            CutoffKind::TCombination => t_combination_cutoff(key.n, key.horizon, key.alpha(), key.draws, key.seed)?,
            CutoffKind::GlobalNullT => global_null_t_cutoff(key.n, key.horizon, key.alpha(), key.draws, key.seed)?,
        };
        self.map.write().expect("cutoff cache poisoned").insert(key, c);
        Ok(c)
    }

    pub fn t_combination(&self, n: usize, horizon: usize, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
        self.get_or_compute(CutoffKey::new(CutoffKind::TCombination, n, horizon, alpha, draws, seed))
    }

    pub fn global_null_t(&self, n: usize, horizon: usize, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
        self.get_or_compute(CutoffKey::new(CutoffKind::GlobalNullT, n, horizon, alpha, draws, seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn quantile_rule() {
        let mut v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(upper_quantile(&mut v, 0.05), 95.0);
        assert_eq!(upper_quantile(&mut v, 1.0), 0.0);
        assert_eq!(upper_quantile(&mut v, 0.0), 100.0);
        let mut w: Vec<f64> = (1..=20).map(f64::from).collect();
        let c = upper_quantile(&mut w, 0.07);
        assert_eq!(w.iter().filter(|&&x| x > c).count(), 1);
    }

    #[test]
    fn single_batch_matches_t_quantile() {
        let oracle = StudentsT::new(0.0, 1.0, 30.0).unwrap().inverse_cdf(0.975);
        assert!((oracle - 2.042).abs() < 1e-3);
        let c = t_combination_cutoff(32, 1, 0.05, DEFAULT_CUTOFF_DRAWS, 7).unwrap();
        assert!((c - oracle).abs() < 0.01, "{c} vs {oracle}");
    }

    #[test]
    fn large_n_is_normal() {
        let c = t_combination_cutoff(100_000, 1, 0.05, DEFAULT_CUTOFF_DRAWS, 8).unwrap();
        assert!((c - 1.959_963_984_540_054).abs() < 0.01, "{c}");
    }

    #[test]
    fn heavier_tails_at_small_n() {
        let small = t_combination_cutoff(6, 3, 0.05, 200_000, 1).unwrap();
        let large = t_combination_cutoff(100, 3, 0.05, 200_000, 1).unwrap();
        assert!(small > large);
    }

    #[test]
    fn deterministic_and_validated() {
        let a = t_combination_cutoff(10, 4, 0.05, MIN_DRAWS, 3).unwrap();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| t_combination_cutoff(10, 4, 0.05, MIN_DRAWS, 3).unwrap());
        assert_eq!(a, b);
        assert!(t_combination_cutoff(3, 4, 0.05, MIN_DRAWS, 3).is_err());
        assert!(t_combination_cutoff(10, 4, 0.05, 10, 3).is_err());
        assert!(global_null_t_cutoff(3, 4, 0.05, MIN_DRAWS, 3).is_err());
    }

    #[test]
    fn global_null_cutoff_near_chi_squared_for_large_n() {
        let c = global_null_t_cutoff(100_000, 3, 0.05, 400_000, 2).unwrap();
        let chi = chi_squared_cutoff(3, 0.05) / 3.0;
        assert!((c - chi).abs() < 0.03, "{c} vs {chi}");
    }

    #[test]
    fn chi_squared_cutoffs() {
        assert!((chi_squared_cutoff(1, 0.05) - 3.841_458_820_694_124).abs() < 1e-9);
        let cs: Vec<f64> = (1..30).map(|t| chi_squared_cutoff(t, 0.05)).collect();
        assert!(cs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn cache_reuses_values() {
        let cache = CutoffCache::new();
        let a = cache.t_combination(12, 2, 0.05, MIN_DRAWS, 5).unwrap();
        assert_eq!(cache.len(), 1);
        let b = cache.t_combination(12, 2, 0.05, MIN_DRAWS, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.len(), 1);
        cache.global_null_t(12, 2, 0.05, MIN_DRAWS, 5).unwrap();
        assert_eq!(cache.len(), 2);
    }
}
