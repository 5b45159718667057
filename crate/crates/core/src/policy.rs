//! Batched action-probability rules for the two-arm bandit.
//!
//! Each rule maps the sufficient statistics of the history to the probability
//! of pulling arm 1 in the next batch. The result is clamped into
//! `[clip_lo, clip_hi]`, which enforces a constant-rate clipping constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::special::std_normal_cdf;
use crate::model::{BatchRecord, ExperimentSpec};
use crate::scalar::Scalar;

/// Pull counts and reward sums per arm over completed batches.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HistorySummary<F = f64> {
    pub n0: usize,
    pub n1: usize,
    pub sum0: F,
    pub sum1: F,
}

impl<F: Scalar> HistorySummary<F> {
    pub fn push(&mut self, b: &BatchRecord<F>) {
        self.n0 += b.n0;
        self.n1 += b.n1;
        self.sum0 = self.sum0 + b.reward_sum(0);
        self.sum1 = self.sum1 + b.reward_sum(1);
    }

    pub fn from_batches(batches: &[BatchRecord<F>]) -> Self {
        let mut h = Self {
            n0: 0,
            n1: 0,
            sum0: F::zero(),
            sum1: F::zero(),
        };
        for b in batches {
            h.push(b);
        }
        h
    }

    /// Pooled mean of arm `k`, `None` if it was never pulled.
    pub fn mean(&self, arm: u8) -> Option<F> {
        let (n, s) = if arm == 1 { (self.n1, self.sum1) } else { (self.n0, self.sum0) };
        (n > 0).then(|| s / F::from_count(n))
    }
}

/// Which rule computes the arm-1 probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
#[serde(bound(deserialize = "F: Scalar"))]
pub enum PolicyRule<F = f64> {
    EpsilonGreedy {
        epsilon: F,
    },
    Thompson {
        #[serde(default)]
        prior_mean: F,
        prior_var: F,
        model_var: F,
    },
    Ucb {
        /// Confidence level; `None` means `1 / (n T)`.
        #[serde(default)]
        delta: Option<F>,
    },
    /// Fixed randomization probability.
    Fixed {
        prob: F,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "F: Scalar"))]
pub struct PolicySpec<F = f64> {
    #[serde(flatten)]
    pub rule: PolicyRule<F>,
    /// Overrides the experiment's clipping bounds when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_lo: Option<F>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_hi: Option<F>,
    #[serde(default = "half")]
    pub first_batch_prob: F,
}

fn half<F: Scalar>() -> F {
    F::lit(0.5)
}

impl<F: Scalar> PolicySpec<F> {
    pub fn new(rule: PolicyRule<F>) -> Self {
        Self {
            rule,
            clip_lo: None,
            clip_hi: None,
            first_batch_prob: half(),
        }
    }

    pub fn thompson() -> Self {
        Self::new(PolicyRule::Thompson {
            prior_mean: F::zero(),
            prior_var: F::one(),
            model_var: F::one(),
        })
    }

    pub fn epsilon_greedy(epsilon: F) -> Self {
        Self::new(PolicyRule::EpsilonGreedy { epsilon })
    }

    pub fn ucb(delta: Option<F>) -> Self {
        Self::new(PolicyRule::Ucb { delta })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        let unit = |x: F| x > F::zero() && x < F::one();
        match &self.rule {
            PolicyRule::EpsilonGreedy { epsilon } if !unit(*epsilon) => bad("epsilon must lie in (0, 1)"),
            PolicyRule::Thompson {
                prior_var, model_var, ..
            } if !(*prior_var > F::zero() && *model_var > F::zero()) => bad("Thompson variances must be positive"),
            PolicyRule::Ucb { delta: Some(d) } if !unit(*d) => bad("UCB delta must lie in (0, 1)"),
            PolicyRule::Fixed { prob } if !(*prob >= F::zero() && *prob <= F::one()) => bad("fixed probability must lie in [0, 1]"),
            _ if !(self.first_batch_prob >= F::zero() && self.first_batch_prob <= F::one()) => {
                bad("first_batch_prob must lie in [0, 1]")
            }
            _ => Ok(()),
        }
    }

    /// Effective clipping interval given the experiment's defaults.
    pub fn clip_bounds(&self, lo: F, hi: F) -> (F, F) {
        (self.clip_lo.unwrap_or(lo), self.clip_hi.unwrap_or(hi))
    }

    /// Arm-1 probability before clipping.
    pub fn raw_prob(&self, h: &HistorySummary<F>, spec: &ExperimentSpec<F>) -> F {
        let first = self.first_batch_prob;
        let (_, hi) = self.clip_bounds(spec.clip_lo, spec.clip_hi);
        match &self.rule {
            PolicyRule::EpsilonGreedy { epsilon } => epsilon_greedy_prob(h, *epsilon, first),
            PolicyRule::Thompson {
                prior_mean,
                prior_var,
                model_var,
            } => {
                if h.n0 + h.n1 == 0 {
                    first
                } else {
                    thompson_prob_with_mean(h, *prior_mean, *prior_var, *model_var)
                }
            }
            PolicyRule::Ucb { delta } => {
                let d = delta.unwrap_or_else(|| F::one() / F::from_count(spec.total()));
                ucb_prob(h, d, hi, first)
            }
            PolicyRule::Fixed { prob } => *prob,
        }
    }

    /// Arm-1 probability after clipping; what the simulator uses.
    pub fn action_prob(&self, h: &HistorySummary<F>, spec: &ExperimentSpec<F>) -> F {
        let (lo, hi) = self.clip_bounds(spec.clip_lo, spec.clip_hi);
        // bounds validated with the spec
        clip_prob(self.raw_prob(h, spec), lo, hi).unwrap_or(lo)
    }
}

/// `min(hi, max(lo, p))`.
pub fn clip_prob<F: Scalar>(p: F, lo: F, hi: F) -> Result<F> {
    if lo > hi {
        return Err(Error::InvalidArgument(format!("clip bounds reversed: {lo} > {hi}")));
    }
    Ok(hi.min(lo.max(p)))
}

/// `1 - eps/2` if arm 1's pooled mean is strictly larger, else `eps/2`.
pub fn epsilon_greedy_prob<F: Scalar>(h: &HistorySummary<F>, epsilon: F, fallback: F) -> F {
    match (h.mean(1), h.mean(0)) {
        (Some(m1), Some(m0)) => {
            let half = epsilon / F::lit(2.0);
            if m1 > m0 {
                F::one() - half
            } else {
                half
            }
        }
        _ => fallback,
    }
}

/// Posterior probability that arm 1 has the larger mean under independent
/// `Normal(0, prior_var)` priors and `Normal(mean, model_var)` rewards.
pub fn thompson_prob<F: Scalar>(h: &HistorySummary<F>, prior_var: F, model_var: F) -> F {
    thompson_prob_with_mean(h, F::zero(), prior_var, model_var)
}

pub fn thompson_prob_with_mean<F: Scalar>(h: &HistorySummary<F>, prior_mean: F, prior_var: F, model_var: F) -> F {
    let (m1, v1) = normal_posterior(h.n1, h.sum1, prior_mean, prior_var, model_var);
    let (m0, v0) = normal_posterior(h.n0, h.sum0, prior_mean, prior_var, model_var);
    let z = (m1 - m0) / (v1 + v0).sqrt();
    F::lit(std_normal_cdf(z.as_f64()))
}

/// Conjugate posterior `(mean, variance)` of one arm's mean.
fn normal_posterior<F: Scalar>(count: usize, sum: F, prior_mean: F, prior_var: F, model_var: F) -> (F, F) {
    let shrink = model_var / prior_var;
    let denom = shrink + F::from_count(count);
    ((sum + shrink * prior_mean) / denom, model_var / denom)
}

/// Returns `pi_hi` when arm 1's upper confidence bound is strictly larger,
/// `1 - pi_hi` otherwise. An unpulled arm has an infinite bound.
pub fn ucb_prob<F: Scalar>(h: &HistorySummary<F>, delta: F, pi_hi: F, fallback: F) -> F {
    if h.n0 == 0 && h.n1 == 0 {
        return fallback;
    }
    let bonus = |n: usize| (F::lit(2.0) * (F::one() / delta).ln() / F::from_count(n)).sqrt();
    let upper = |arm: u8, n: usize| match h.mean(arm) {
        Some(m) => m + bonus(n),
        None => F::infinity(),
    };
    if upper(1, h.n1) > upper(0, h.n0) {
        pi_hi
    } else {
        F::one() - pi_hi
    }
}
