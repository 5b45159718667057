//! Experiment description, reward environments and batch data generation.
//!
//! A two-arm batched bandit draws `n` actions per batch from a single
//! Bernoulli propensity computed from earlier batches. Rewards follow
//! `R = (1 - A) * beta0_t + A * beta1_t + noise`, where the arm means may move
//! between batches according to a [`TrendSpec`].

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{HistorySummary, PolicySpec};
use crate::rng::Streams;
use crate::scalar::Scalar;

/// Noise variance, constant or one value per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseVariance<F> {
    Constant(F),
    Schedule(Vec<F>),
}

impl<F: Scalar> NoiseVariance<F> {
    /// Variance for 1-based batch `t`.
    pub fn at(&self, t: usize) -> F {
        match self {
            NoiseVariance::Constant(s) => *s,
            NoiseVariance::Schedule(v) => v[t - 1],
        }
    }

    /// Average variance over the first `horizon` batches.
    pub fn mean(&self, horizon: usize) -> F {
        match self {
            NoiseVariance::Constant(s) => *s,
            NoiseVariance::Schedule(v) => {
                let s = v.iter().take(horizon).fold(F::zero(), |a, &b| a + b);
                s / F::from_count(horizon.min(v.len()).max(1))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, NoiseVariance::Constant(_))
    }
}

/// Shape of the shared baseline in a baseline-shift trend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Baseline<F> {
    /// `amplitude * (1 - ((t-1)/(T-1))^2)`, a decreasing curve.
    Quadratic,
    /// `amplitude * sin(2 pi (t-1) / period)`.
    Sinusoidal,
    /// Explicit baseline values, one per batch (amplitude ignored).
    Sequence { values: Vec<F> },
}

/// Per-batch arm means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
#[serde(bound(deserialize = "F: Scalar"))]
pub enum TrendSpec<F> {
    Constant {
        beta0: F,
        beta1: F,
    },
    Explicit {
        pairs: Vec<(F, F)>,
    },
    BaselineShift {
        margin: F,
        baseline: Baseline<F>,
        #[serde(default = "one")]
        amplitude: F,
        /// Sinusoid period in batches; defaults to `T`.
        #[serde(default)]
        period: Option<F>,
    },
}

fn one<F: Scalar>() -> F {
    F::one()
}

impl<F: Scalar> TrendSpec<F> {
    pub fn zero() -> Self {
        TrendSpec::Constant {
            beta0: F::zero(),
            beta1: F::zero(),
        }
    }

    /// Same baselines with the margin removed: arm 1 gets arm 0's mean.
    pub fn to_null(&self, horizon: usize) -> Result<Self> {
        let pairs = build_trend(self, horizon)?;
        Ok(TrendSpec::Explicit {
            pairs: pairs.into_iter().map(|(b0, _)| (b0, b0)).collect(),
        })
    }

    /// Margin `beta1 - beta0` if it is the same in every batch.
    pub fn constant_margin(&self, horizon: usize) -> Option<F> {
        let pairs = build_trend(self, horizon).ok()?;
        let m = pairs[0].1 - pairs[0].0;
        let tol = F::lit(1e-12) * (F::one() + m.abs());
        pairs
            .iter()
            .all(|&(b0, b1)| ((b1 - b0) - m).abs() <= tol)
            .then_some(m)
    }
}

/// Expands a trend into `horizon` pairs `(beta0_t, beta1_t)`.
pub fn build_trend<F: Scalar>(spec: &TrendSpec<F>, horizon: usize) -> Result<Vec<(F, F)>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("T must be at least 1".into()));
    }
    match spec {
        TrendSpec::Constant { beta0, beta1 } => Ok(vec![(*beta0, *beta1); horizon]),
        TrendSpec::Explicit { pairs } => {
            if pairs.len() != horizon {
                return Err(Error::LengthMismatch {
                    expected: horizon,
                    actual: pairs.len(),
                });
            }
            Ok(pairs.clone())
        }
        TrendSpec::BaselineShift {
            margin,
            baseline,
            amplitude,
            period,
        } => {
            let base: Vec<F> = match baseline {
                Baseline::Quadratic => (0..horizon)
                    .map(|i| {
                        let x = if horizon > 1 {
                            i as f64 / (horizon - 1) as f64
                        } else {
                            0.0
                        };
                        *amplitude * F::lit(1.0 - x * x)
                    })
                    .collect(),
                Baseline::Sinusoidal => {
                    let p = period.map(|p| p.as_f64()).unwrap_or(horizon as f64);
                    if p <= 0.0 {
                        return Err(Error::InvalidSpec("sinusoid period must be positive".into()));
                    }
                    (0..horizon)
                        .map(|i| *amplitude * F::lit((2.0 * PI * i as f64 / p).sin()))
                        .collect()
                }
                Baseline::Sequence { values } => {
                    if values.len() != horizon {
                        return Err(Error::LengthMismatch {
                            expected: horizon,
                            actual: values.len(),
                        });
                    }
                    values.clone()
                }
            };
            Ok(base.into_iter().map(|b| (b, b + *margin)).collect())
        }
    }
}

/// Everything needed to simulate one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct ExperimentSpec<F = f64> {
    /// Batch size.
    pub n: usize,
    /// Number of batches.
    #[serde(rename = "T")]
    pub horizon: usize,
    #[serde(default = "two")]
    pub num_arms: usize,
    pub clip_lo: F,
    pub clip_hi: F,
    pub noise_sigma2: NoiseVariance<F>,
    #[serde(default)]
    pub sigma_known: bool,
    pub trend: TrendSpec<F>,
    pub policy: PolicySpec<F>,
    #[serde(default)]
    pub seed: u64,
}

fn two() -> usize {
    2
}

impl<F: Scalar> ExperimentSpec<F> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !self.sigma_known && self.n < 3 {
            return bad("n must be at least 3 when the noise variance is estimated");
        }
        if self.horizon < 1 {
            return bad("T must be at least 1");
        }
        if self.num_arms != 2 {
            return bad("the multi-arm simulator supports exactly two arms");
        }
        let (lo, hi) = (self.clip_lo, self.clip_hi);
        if !(lo > F::zero() && lo <= hi && hi < F::one()) {
            return bad("clipping bounds must satisfy 0 < clip_lo <= clip_hi < 1");
        }
        match &self.noise_sigma2 {
            NoiseVariance::Constant(s) if !(*s >= F::zero()) => return bad("noise variance must be >= 0"),
            NoiseVariance::Schedule(v) => {
                if v.len() != self.horizon {
                    return Err(Error::LengthMismatch {
                        expected: self.horizon,
                        actual: v.len(),
                    });
                }
                if v.iter().any(|s| !(*s >= F::zero())) {
                    return bad("noise variance must be >= 0");
                }
            }
            _ => {}
        }
        build_trend(&self.trend, self.horizon)?;
        self.policy.validate()?;
        let (plo, phi) = self.policy.clip_bounds(lo, hi);
        if !(plo > F::zero() && plo <= phi && phi < F::one()) {
            return bad("policy clipping bounds must satisfy 0 < lo <= hi < 1");
        }
        Ok(())
    }

    /// Total number of observations, `n * T`.
    pub fn total(&self) -> usize {
        self.n * self.horizon
    }

    /// The same experiment with the margin set to zero in every batch.
    pub fn to_null(&self) -> Result<Self> {
        Ok(Self {
            trend: self.trend.to_null(self.horizon)?,
            ..self.clone()
        })
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// One batch of actions and rewards plus the propensity used to draw them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord<F = f64> {
    /// 1-based batch index.
    pub t: usize,
    pub propensity: F,
    pub actions: Vec<u8>,
    pub rewards: Vec<F>,
    /// Pulls of arm 0.
    pub n0: usize,
    /// Pulls of arm 1.
    pub n1: usize,
}

impl<F: Scalar> BatchRecord<F> {
    pub fn new(t: usize, propensity: F, actions: Vec<u8>, rewards: Vec<F>) -> Result<Self> {
        if actions.len() != rewards.len() {
            return Err(Error::LengthMismatch {
                expected: actions.len(),
                actual: rewards.len(),
            });
        }
        if actions.iter().any(|&a| a > 1) {
            return Err(Error::InvalidArgument("actions must be 0 or 1".into()));
        }
        let n1 = actions.iter().filter(|&&a| a == 1).count();
        Ok(Self {
            t,
            propensity,
            n0: actions.len() - n1,
            n1,
            actions,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn count(&self, arm: u8) -> usize {
        if arm == 1 {
            self.n1
        } else {
            self.n0
        }
    }

    /// Sum of rewards observed on `arm`.
    pub fn reward_sum(&self, arm: u8) -> F {
        self.iter()
            .filter(|&(a, _)| a == arm)
            .fold(F::zero(), |s, (_, r)| s + r)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u8, F)> + '_ {
        self.actions.iter().copied().zip(self.rewards.iter().copied())
    }

    /// Adds `c` to every reward in the batch.
    pub fn shifted(&self, c: F) -> Self {
        Self {
            rewards: self.rewards.iter().map(|&r| r + c).collect(),
            ..self.clone()
        }
    }

    fn check(&self) -> Result<()> {
        let fresh = Self::new(self.t, self.propensity, self.actions.clone(), self.rewards.clone())?;
        if fresh.n0 != self.n0 || fresh.n1 != self.n1 {
            return Err(Error::InvalidSpec(format!(
                "batch {} counts do not match its actions",
                self.t
            )));
        }
        Ok(())
    }
}

/// A complete simulated (or logged) experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct Trajectory<F = f64> {
    pub spec: ExperimentSpec<F>,
    pub batches: Vec<BatchRecord<F>>,
}

impl<F: Scalar> Trajectory<F> {
    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.batches.iter().enumerate() {
            if b.t != i + 1 {
                return Err(Error::InvalidSpec(format!(
                    "batch indices must run 1..T without gaps (found {} at position {})",
                    b.t,
                    i + 1
                )));
            }
            b.check()?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let traj: Self = serde_json::from_str(s)?;
        traj.validate()?;
        Ok(traj)
    }

    /// Order-sensitive FNV digest of actions and reward bits.
    pub fn digest(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for b in &self.batches {
            eat(b.propensity.as_f64().to_bits());
            for (a, r) in b.iter() {
                eat(u64::from(a));
                eat(r.as_f64().to_bits());
            }
        }
        h
    }
}

/// Source of reward noise with a given variance.
pub trait NoiseModel<F: Scalar>: Sync {
    fn sample<R: Rng + ?Sized>(&self, variance: F, rng: &mut R) -> F;
}

/// `Normal(0, sigma^2)` noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianNoise;

impl<F: Scalar> NoiseModel<F> for GaussianNoise {
    fn sample<R: Rng + ?Sized>(&self, variance: F, rng: &mut R) -> F {
        variance.sqrt() * F::sample_standard_normal(rng)
    }
}

/// Bounded `Uniform(-a, a)` noise with `a = sqrt(3 sigma^2)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformNoise;

impl<F: Scalar> NoiseModel<F> for UniformNoise {
    fn sample<R: Rng + ?Sized>(&self, variance: F, rng: &mut R) -> F {
        let a = (F::lit(3.0) * variance).sqrt();
        a * (F::lit(2.0) * F::sample_unit(rng) - F::one())
    }
}

/// Draws one batch with Gaussian noise.
pub fn generate_batch<F: Scalar, R: Rng + ?Sized>(
    t: usize,
    propensity: F,
    means: (F, F),
    variance: F,
    n: usize,
    rng: &mut R,
) -> BatchRecord<F> {
    generate_batch_with(t, propensity, means, variance, n, rng, &GaussianNoise)
}

/// Draws one batch: `n` Bernoulli(`propensity`) actions, then `n` noise terms.
pub fn generate_batch_with<F: Scalar, R: Rng + ?Sized, N: NoiseModel<F>>(
    t: usize,
    propensity: F,
    means: (F, F),
    variance: F,
    n: usize,
    rng: &mut R,
    noise: &N,
) -> BatchRecord<F> {
    debug_assert!(propensity >= F::zero() && propensity <= F::one());
    let actions: Vec<u8> = (0..n)
        .map(|_| u8::from(F::sample_unit(rng) < propensity))
        .collect();
    let rewards = actions
        .iter()
        .map(|&a| {
            let mean = if a == 1 { means.1 } else { means.0 };
            mean + noise.sample(variance, rng)
        })
        .collect();
    let n1 = actions.iter().filter(|&&a| a == 1).count();
    BatchRecord {
        t,
        propensity,
        n0: n - n1,
        n1,
        actions,
        rewards,
    }
}

/// Runs the configured policy for `T` batches with Gaussian noise.
pub fn simulate<F: Scalar>(spec: &ExperimentSpec<F>, streams: Streams) -> Result<Trajectory<F>> {
    simulate_with(spec, streams, &GaussianNoise)
}

pub fn simulate_with<F: Scalar, N: NoiseModel<F>>(
    spec: &ExperimentSpec<F>,
    streams: Streams,
    noise: &N,
) -> Result<Trajectory<F>> {
    let means = build_trend(&spec.trend, spec.horizon)?;
    let mut history = HistorySummary::default();
    let mut batches = Vec::with_capacity(spec.horizon);
    for t in 1..=spec.horizon {
        let pi = spec.policy.action_prob(&history, spec);
        let mut rng = streams.batch(t as u64).rng();
        let b = generate_batch_with(
            t,
            pi,
            means[t - 1],
            spec.noise_sigma2.at(t),
            spec.n,
            &mut rng,
            noise,
        );
        history.push(&b);
        batches.push(b);
    }
    Ok(Trajectory {
        spec: spec.clone(),
        batches,
    })
}
