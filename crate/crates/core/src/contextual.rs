//! Contextual `K`-arm batches with linear rewards `c' beta_{t,k}` and the
//! per-batch standardized margin statistic between two arms.
//!
//! Linear algebra runs in `f64` on `nalgebra` matrices.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Invalid, Result};
use crate::inference::special::std_normal_cdf;
use crate::rng::{label, Streams};
use crate::scalar::Scalar;

/// Relative eigenvalue floor for matrix inverse square roots.
pub const EIGEN_FLOOR: f64 = 1e-8;
/// Reciprocal condition number below which a Gram matrix counts as singular.
pub const GRAM_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContextInvalid {
    #[error("Gram matrix of arm {arm} is singular (condition number {condition:e})")]
    SingularGram { arm: usize, condition: f64 },
    #[error("covariance eigenvalue {min_eigenvalue:e} below floor {floor:e}")]
    DegenerateCovariance { min_eigenvalue: f64, floor: f64 },
}

impl ContextInvalid {
    pub fn reason(&self) -> Invalid {
        match self {
            ContextInvalid::SingularGram { .. } => Invalid::SingularGram,
            ContextInvalid::DegenerateCovariance { .. } => Invalid::DegenerateVariance,
        }
    }
}

/// One batch of contextual data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBatch {
    pub t: usize,
    pub num_arms: usize,
    /// `n` rows of length `d`.
    pub contexts: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Per-context action probabilities used to draw `actions`.
    pub propensities: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct CsvHeader<'a> {
    t: usize,
    d: usize,
    num_arms: usize,
    n: usize,
    propensities: &'a [Vec<f64>],
}

impl ContextBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.contexts.first().map_or(0, Vec::len)
    }

    pub fn count(&self, arm: usize) -> usize {
        self.actions.iter().filter(|&&a| a == arm).count()
    }

    /// JSON header carrying the propensity record.
    pub fn header_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&CsvHeader {
            t: self.t,
            d: self.dim(),
            num_arms: self.num_arms,
            n: self.len(),
            propensities: &self.propensities,
        })?)
    }

    /// Columnar CSV: `i, c_1..c_d, action, reward`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let d = self.dim();
        let mut header = vec!["i".to_string()];
        header.extend((1..=d).map(|j| format!("c_{j}")));
        header.push("action".into());
        header.push("reward".into());
        out.write_record(&header)?;
        for (i, ((c, a), r)) in self.contexts.iter().zip(&self.actions).zip(&self.rewards).enumerate() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(c.iter().map(f64::to_string));
            row.push(a.to_string());
            row.push(r.to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Per-arm Gram matrix `sum 1{A=k} c c'` and moment `sum 1{A=k} c R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmGram {
    pub gram: DMatrix<f64>,
    pub moment: DVector<f64>,
    pub count: usize,
}

impl ArmGram {
    pub fn zeros(d: usize) -> Self {
        Self {
            gram: DMatrix::zeros(d, d),
            moment: DVector::zeros(d),
            count: 0,
        }
    }

    pub fn add(&mut self, c: &[f64], r: f64) {
        let v = DVector::from_column_slice(c);
        self.gram.ger(1.0, &v, &v, 1.0);
        self.moment.axpy(r, &v, 1.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &ArmGram) {
        self.gram += &other.gram;
        self.moment += &other.moment;
        self.count += other.count;
    }

    pub fn from_batch(b: &ContextBatch, arm: usize) -> Self {
        let mut g = Self::zeros(b.dim());
        for ((c, &a), &r) in b.contexts.iter().zip(&b.actions).zip(&b.rewards) {
            if a == arm {
                g.add(c, r);
            }
        }
        g
    }

    fn check(&self, arm: usize) -> std::result::Result<(), ContextInvalid> {
        let eig = self.gram.clone().symmetric_eigen().eigenvalues;
        let max = eig.max();
        let min = eig.min();
        if !(max > 0.0) || min <= GRAM_RCOND * max {
            let condition = if min > 0.0 { max / min } else { f64::INFINITY };
            return Err(ContextInvalid::SingularGram { arm, condition });
        }
        Ok(())
    }

    /// Solves `gram * beta = moment`.
    pub fn solve(&self, arm: usize) -> std::result::Result<DVector<f64>, ContextInvalid> {
        self.check(arm)?;
        let chol = self.gram.clone().cholesky().ok_or(ContextInvalid::SingularGram {
            arm,
            condition: f64::INFINITY,
        })?;
        Ok(chol.solve(&self.moment))
    }

    pub fn inverse(&self, arm: usize) -> std::result::Result<DMatrix<f64>, ContextInvalid> {
        self.check(arm)?;
        let chol = self.gram.clone().cholesky().ok_or(ContextInvalid::SingularGram {
            arm,
            condition: f64::INFINITY,
        })?;
        Ok(chol.inverse())
    }
}

/// Least squares coefficients of arm `k` within one batch.
pub fn per_arm_ols(b: &ContextBatch, arm: usize) -> std::result::Result<DVector<f64>, ContextInvalid> {
    ArmGram::from_batch(b, arm).solve(arm)
}

/// `M^{-1/2}` for symmetric positive semidefinite `M`, rejecting eigenvalues
/// below `EIGEN_FLOOR * trace(M) / d`.
pub fn inverse_sqrt_psd(m: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, ContextInvalid> {
    let d = m.nrows();
    let floor = EIGEN_FLOOR * m.trace() / d as f64;
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min > floor) {
        return Err(ContextInvalid::DegenerateCovariance {
            min_eigenvalue: min,
            floor,
        });
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
}

/// `M^{-1/2} ((beta_x - beta_y) - delta) / sigma`, `M = C_x^{-1} + C_y^{-1}`.
pub fn contextual_bols_statistic(
    b: &ContextBatch,
    x: usize,
    y: usize,
    delta: &DVector<f64>,
    sigma2: f64,
) -> std::result::Result<DVector<f64>, ContextInvalid> {
    let gx = ArmGram::from_batch(b, x);
    let gy = ArmGram::from_batch(b, y);
    let diff = gx.solve(x)? - gy.solve(y)?;
    let m = gx.inverse(x)? + gy.inverse(y)?;
    let root = inverse_sqrt_psd(&m)?;
    Ok(root * (diff - delta) / sigma2.sqrt())
}

/// Projects `q` onto `{p : lo <= p_k <= hi, sum p = 1}` (Euclidean).
///
/// Two arms use the exact interval form; more arms find the shift `tau` in
/// `p_k = clamp(q_k - tau, lo, hi)` by bisection.
pub fn clip_simplex(q: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    let k = q.len() as f64;
    if !(lo <= hi && lo * k <= 1.0 + 1e-12 && hi * k >= 1.0 - 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "clip bounds [{lo}, {hi}] infeasible for {} arms",
            q.len()
        )));
    }
    if q.len() == 2 {
        let p1 = q[1].clamp(lo.max(1.0 - hi), hi.min(1.0 - lo));
        return Ok(vec![1.0 - p1, p1]);
    }
    let total = |tau: f64| q.iter().map(|&x| (x - tau).clamp(lo, hi)).sum::<f64>();
    let (mut a, mut b) = (
        q.iter().copied().fold(f64::INFINITY, f64::min) - hi,
        q.iter().copied().fold(f64::NEG_INFINITY, f64::max) - lo,
    );
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if total(mid) > 1.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let tau = 0.5 * (a + b);
    let mut p: Vec<f64> = q.iter().map(|&x| (x - tau).clamp(lo, hi)).collect();
    let s: f64 = p.iter().sum();
    for x in &mut p {
        *x /= s;
    }
    Ok(p)
}

/// How actions are chosen given a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ContextPolicy {
    /// Thompson sampling with independent Bayesian linear models per arm,
    /// prior `Normal(0, prior_var I)` and noise variance `model_var`.
    Thompson {
        prior_var: f64,
        model_var: f64,
        /// Posterior draws per context when `K > 2`.
        #[serde(default = "default_draws")]
        draws: usize,
    },
    /// The same probabilities for every context.
    Fixed { probs: Vec<f64> },
}

fn default_draws() -> usize {
    1000
}

impl Default for ContextPolicy {
    fn default() -> Self {
        ContextPolicy::Thompson {
            prior_var: 1.0,
            model_var: 1.0,
            draws: default_draws(),
        }
    }
}

/// Gaussian posterior over one arm's coefficients.
#[derive(Debug, Clone)]
struct ArmPosterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl ArmPosterior {
    fn new(g: &ArmGram, prior_var: f64, model_var: f64) -> Self {
        let d = g.gram.nrows();
        let precision = DMatrix::identity(d, d) / prior_var + &g.gram / model_var;
        let cov = precision.cholesky().expect("posterior precision is positive definite").inverse();
        let mean = &cov * &g.moment / model_var;
        let chol = cov.clone().cholesky().expect("covariance is positive definite").l();
        Self { mean, cov, chol }
    }
}

impl ContextPolicy {
    pub fn validate(&self, num_arms: usize) -> Result<()> {
        match self {
            ContextPolicy::Thompson {
                prior_var,
                model_var,
                draws,
            } => {
                if !(*prior_var > 0.0 && *model_var > 0.0) {
                    return Err(Error::InvalidSpec("Thompson variances must be positive".into()));
                }
                if num_arms > 2 && *draws == 0 {
                    return Err(Error::InvalidSpec("Thompson needs posterior draws".into()));
                }
            }
            ContextPolicy::Fixed { probs } => {
                let s: f64 = probs.iter().sum();
                if probs.len() != num_arms || probs.iter().any(|p| !(*p >= 0.0)) || (s - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSpec("fixed probabilities must form a distribution over the arms".into()));
                }
            }
        }
        Ok(())
    }

    /// Unclipped action probabilities for each context given per-arm
    /// statistics accumulated over earlier batches.
    fn probabilities<R: Rng + ?Sized>(
        &self,
        contexts: &[Vec<f64>],
        history: &[ArmGram],
        rng: &mut R,
    ) -> Vec<Vec<f64>> {
        match self {
            ContextPolicy::Fixed { probs } => vec![probs.clone(); contexts.len()],
            ContextPolicy::Thompson {
                prior_var,
                model_var,
                draws,
            } => {
                let post: Vec<ArmPosterior> =
                    history.iter().map(|g| ArmPosterior::new(g, *prior_var, *model_var)).collect();
                contexts
                    .iter()
                    .map(|c| {
                        let c = DVector::from_column_slice(c);
                        if post.len() == 2 {
                            let dm = (&post[1].mean - &post[0].mean).dot(&c);
                            let v = (&post[1].cov + &post[0].cov).quadratic_form(&c);
                            let p1 = std_normal_cdf(dm / v.sqrt());
                            vec![1.0 - p1, p1]
                        } else {
                            sampled_argmax_probs(&post, &c, *draws, rng)
                        }
                    })
                    .collect()
            }
        }
    }
}

trait QuadraticForm {
    fn quadratic_form(&self, c: &DVector<f64>) -> f64;
}

impl QuadraticForm for DMatrix<f64> {
    fn quadratic_form(&self, c: &DVector<f64>) -> f64 {
        (self * c).dot(c)
    }
}

/// Frequencies with which each arm's sampled mean `c' beta_k` is largest.
fn sampled_argmax_probs<R: Rng + ?Sized>(post: &[ArmPosterior], c: &DVector<f64>, draws: usize, rng: &mut R) -> Vec<f64> {
    let d = c.len();
    let mut wins = vec![0usize; post.len()];
    let mut z = DVector::zeros(d);
    for _ in 0..draws {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, p) in post.iter().enumerate() {
            for zi in z.iter_mut() {
                *zi = f64::sample_standard_normal(rng);
            }
            let draw = (&p.mean + &p.chol * &z).dot(c);
            if draw > best.1 {
                best = (k, draw);
            }
        }
        wins[best.0] += 1;
    }
    wins.into_iter().map(|w| w as f64 / draws as f64).collect()
}

/// Per-batch coefficient matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ContextCoefficients {
    /// `arms[k]` is `beta_k` for every batch.
    Constant { arms: Vec<Vec<f64>> },
    /// `batches[t - 1][k]` is `beta_{t,k}`.
    PerBatch { batches: Vec<Vec<Vec<f64>>> },
}

impl ContextCoefficients {
    pub fn at(&self, t: usize) -> &[Vec<f64>] {
        match self {
            ContextCoefficients::Constant { arms } => arms,
            ContextCoefficients::PerBatch { batches } => &batches[t - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextualSpec {
    pub d: usize,
    pub num_arms: usize,
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Bound on the non-intercept context coordinates.
    pub u: f64,
    pub noise_sigma2: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub coefficients: ContextCoefficients,
    #[serde(default)]
    pub policy: ContextPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl ContextualSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.d == 0 || self.num_arms < 2 || self.n == 0 || self.horizon == 0 {
            return bad("d, n and T must be positive and K at least 2".into());
        }
        if !(self.u > 0.0) || !(self.noise_sigma2 >= 0.0) {
            return bad("u must be positive and sigma^2 nonnegative".into());
        }
        let k = self.num_arms as f64;
        if !(self.clip_lo > 0.0 && self.clip_lo <= self.clip_hi && self.clip_hi < 1.0)
            || self.clip_lo * k > 1.0
            || self.clip_hi * k < 1.0
        {
            return bad(format!("clip bounds [{}, {}] infeasible", self.clip_lo, self.clip_hi));
        }
        let shape_ok = |arms: &[Vec<f64>]| arms.len() == self.num_arms && arms.iter().all(|b| b.len() == self.d);
        let ok = match &self.coefficients {
            ContextCoefficients::Constant { arms } => shape_ok(arms),
            ContextCoefficients::PerBatch { batches } => {
                batches.len() == self.horizon && batches.iter().all(|a| shape_ok(a))
            }
        };
        if !ok {
            return bad(format!("coefficients must be {} arms of length {}", self.num_arms, self.d));
        }
        self.policy.validate(self.num_arms)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Arm `k` is chosen when `u` falls in its slot, walking from the last arm
/// down; with two arms this is `A = 1{u < p_1}`.
fn categorical(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for k in (1..p.len()).rev() {
        acc += p[k];
        if u < acc {
            return k;
        }
    }
    0
}

/// Draws one batch: `n (d - 1)` context uniforms, then `n` action uniforms,
/// then `n` noise terms, all from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn generate_context_batch<R: Rng + ?Sized>(
    t: usize,
    d: usize,
    n: usize,
    coefficients: &[Vec<f64>],
    mut probs: impl FnMut(&[Vec<f64>]) -> Vec<Vec<f64>>,
    sigma2: f64,
    u: f64,
    rng: &mut R,
) -> ContextBatch {
    let contexts: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut c = Vec::with_capacity(d);
            c.push(1.0);
            c.extend((1..d).map(|_| u * (2.0 * rng.random::<f64>() - 1.0)));
            c
        })
        .collect();
    let propensities = probs(&contexts);
    let actions: Vec<usize> = propensities.iter().map(|p| categorical(p, rng.random::<f64>())).collect();
    let sd = sigma2.sqrt();
    let rewards = contexts
        .iter()
        .zip(&actions)
        .map(|(c, &a)| {
            let mean: f64 = c.iter().zip(&coefficients[a]).map(|(x, b)| x * b).sum();
            mean + sd * f64::sample_standard_normal(rng)
        })
        .collect();
    ContextBatch {
        t,
        num_arms: coefficients.len(),
        contexts,
        actions,
        rewards,
        propensities,
    }
}

/// Runs the contextual policy for `T` batches; batch `t` draws from
/// `streams.batch(t)`, posterior sampling from a separate stream.
pub fn simulate_contextual(spec: &ContextualSpec, streams: Streams) -> Result<Vec<ContextBatch>> {
    spec.validate()?;
    let mut history: Vec<ArmGram> = (0..spec.num_arms).map(|_| ArmGram::zeros(spec.d)).collect();
    let mut out = Vec::with_capacity(spec.horizon);
    for t in 1..=spec.horizon {
        let mut rng = streams.batch(t as u64).rng();
        let mut policy_rng = streams.labeled(label::POLICY, t as u64).rng();
        let probs = |cs: &[Vec<f64>]| {
            spec.policy
                .probabilities(cs, &history, &mut policy_rng)
                .into_iter()
                .map(|q| clip_simplex(&q, spec.clip_lo, spec.clip_hi).expect("bounds validated"))
                .collect()
        };
        let b = generate_context_batch(
            t,
            spec.d,
            spec.n,
            spec.coefficients.at(t),
            probs,
            spec.noise_sigma2,
            spec.u,
            &mut rng,
        );
        for (k, h) in history.iter_mut().enumerate() {
            h.merge(&ArmGram::from_batch(&b, k));
        }
        out.push(b);
    }
    Ok(out)
}

/// Stacked statistics `S_1, ..., S_T` for arms `x` vs `y` (length `T d`), or
/// the first batch that could not be standardized.
pub fn stacked_statistics(
    batches: &[ContextBatch],
    x: usize,
    y: usize,
    deltas: &[DVector<f64>],
    sigma2: f64,
) -> std::result::Result<Vec<f64>, (usize, ContextInvalid)> {
    let mut out = Vec::new();
    for (b, delta) in batches.iter().zip(deltas) {
        let s = contextual_bols_statistic(b, x, y, delta, sigma2).map_err(|e| (b.t, e))?;
        out.extend(s.iter());
    }
    Ok(out)
}
