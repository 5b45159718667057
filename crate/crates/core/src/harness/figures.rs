//! Plot-ready data for the standard experiments.
//!
//! Each experiment writes `<name>.csv` (one header row) and `<name>.json`
//! (options plus any per-panel summaries) into the output directory.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::plan::{Calibration, McPlan};
use super::summary::{monte_carlo_with, McSummary};
use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::inference::special::std_normal_cdf;
use crate::model::{build_trend, Baseline, ExperimentSpec, NoiseVariance, TrendSpec};
use crate::policy::PolicySpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Figure {
    ZstatHist,
    UndercoverageSweep,
    Type1Stationary,
    PowerStationary,
    NonstationaryBaseline,
    NstePower,
}

impl Figure {
    pub const ALL: [Figure; 6] = [
        Figure::ZstatHist,
        Figure::UndercoverageSweep,
        Figure::Type1Stationary,
        Figure::PowerStationary,
        Figure::NonstationaryBaseline,
        Figure::NstePower,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Figure::ZstatHist => "zstat_hist",
            Figure::UndercoverageSweep => "undercoverage_sweep",
            Figure::Type1Stationary => "type1_stationary",
            Figure::PowerStationary => "power_stationary",
            Figure::NonstationaryBaseline => "nonstationary_baseline",
            Figure::NstePower => "nste_power",
        }
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FigureOptions {
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Directory for the CSV and JSON files; nothing is written when unset.
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub cutoff_draws: usize,
    pub lambda_reps: usize,
    /// Horizons on the x-axis of the rejection-rate figures.
    pub horizons: Vec<usize>,
    /// Margin grid of the undercoverage sweep.
    pub margins: Vec<f64>,
    /// Batch sizes of the undercoverage sweep.
    pub sizes: Vec<usize>,
    /// Histogram bins over `[-5, 5]`.
    pub bins: usize,
    /// Scale of the shared baseline in the non-stationary baseline runs.
    pub baseline_amplitude: f64,
    /// Scale of the margin trend in the global-null power runs.
    pub trend_amplitude: f64,
    /// Margin of the power runs (`beta0 - beta1`).
    pub power_margin: f64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        Self {
            reps: 10_000,
            seed: 1,
            alpha: 0.05,
            out: None,
            threads: None,
            cutoff_draws: crate::inference::DEFAULT_CUTOFF_DRAWS,
            lambda_reps: 1000,
            horizons: vec![2, 5, 10, 25],
            margins: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5],
            sizes: vec![25, 50, 100],
            bins: 50,
            baseline_amplitude: 1.0,
            trend_amplitude: 0.25,
            power_margin: 0.25,
        }
    }
}

/// Rows of a figure's CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl FigureTable {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn index(&self, column: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == column)
    }

    /// Rows whose `column` equals `value`.
    pub fn select(&self, column: &str, value: &str) -> Vec<&[String]> {
        match self.index(column) {
            Some(i) => self.rows.iter().filter(|r| r[i] == value).map(|r| r.as_slice()).collect(),
            None => Vec::new(),
        }
    }

    /// `column` of `row` parsed as a number.
    pub fn value(&self, row: &[String], column: &str) -> Option<f64> {
        self.index(column).and_then(|i| row[i].parse().ok())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureOutput {
    pub figure: Figure,
    pub table: FigureTable,
    pub details: Value,
    pub files: Vec<PathBuf>,
}

/// Kolmogorov-Smirnov distance between the sample and `N(0, 1)`.
pub fn ks_distance_normal(samples: &[f64]) -> f64 {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf(x);
            (f - i as f64 / m).max((i + 1) as f64 / m - f)
        })
        .fold(0.0, f64::max)
}

/// Equal-width bin counts over `[lo, hi)`; values outside are dropped.
pub fn histogram(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &x in samples {
        if x >= lo && x < hi {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    counts
}

fn base_spec(n: usize, horizon: usize, policy: PolicySpec<f64>, clip: (f64, f64), seed: u64) -> ExperimentSpec<f64> {
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
        seed,
    }
}

fn policies() -> [(&'static str, PolicySpec<f64>); 2] {
    [("thompson", PolicySpec::thompson()), ("epsilon_greedy", PolicySpec::epsilon_greedy(0.1))]
}

fn plan(spec: ExperimentSpec<f64>, opts: &FigureOptions) -> McPlan {
    let mut p = McPlan::new(spec).with_reps(opts.reps).with_seed(opts.seed);
    p.alpha = opts.alpha;
    p.cutoff_draws = opts.cutoff_draws;
    p.lambda_reps = opts.lambda_reps;
    p
}

fn run(plan: &McPlan, opts: &FigureOptions) -> Result<McSummary> {
    monte_carlo_with(plan, opts.threads)
}

/// Estimators in the rejection-rate figures; the global-null test has its
/// own figure.
const MARGIN_TESTS: [EstimatorKind; 5] = [
    EstimatorKind::Ols,
    EstimatorKind::Bols,
    EstimatorKind::WDecorrelated,
    EstimatorKind::AwAipw,
    EstimatorKind::SnBound,
];

const RATE_COLUMNS: [&str; 8] = ["policy", "T", "estimator", "rejection_rate", "se", "valid", "cutoff", "calibrated"];

fn rate_rows(table: &mut FigureTable, label: &str, horizon: usize, s: &McSummary) {
    for e in &s.estimators {
        let calibrated = s.calibrated.get(&e.estimator).is_some_and(|c| c.applied);
        table.push(vec![
            label.to_string(),
            horizon.to_string(),
            e.estimator.to_string(),
            e.rejection_rate.to_string(),
            e.se.to_string(),
            e.valid.to_string(),
            e.cutoff.map(|c| c.to_string()).unwrap_or_default(),
            calibrated.to_string(),
        ]);
    }
}

fn zstat_hist(opts: &FigureOptions) -> Result<(FigureTable, Value)> {
    let mut table = FigureTable::new(&["policy", "estimator", "bin_lo", "bin_hi", "count", "density", "normal_density"]);
    let mut panels = Vec::new();
    let (lo, hi) = (-5.0, 5.0);
    let width = (hi - lo) / opts.bins as f64;
    for (label, policy) in policies() {
        let mut spec = base_spec(100, 25, policy, (0.05, 0.95), opts.seed);
        spec.sigma_known = true;
        let mut p = plan(spec, opts).with_estimators(&[EstimatorKind::Ols, EstimatorKind::Bols]);
        p.raw = true;
        let s = run(&p, opts)?;
        let raw = s.raw.as_deref().unwrap_or_default();
        for kind in [EstimatorKind::Ols, EstimatorKind::Bols] {
            let z: Vec<f64> = raw
                .iter()
                .filter_map(|o| o.get(kind).and_then(|e| e.result).map(|r| r.statistic))
                .collect();
            let counts = histogram(&z, lo, hi, opts.bins);
            for (k, c) in counts.iter().enumerate() {
                let a = lo + k as f64 * width;
                let b = a + width;
                table.push(vec![
                    label.to_string(),
                    kind.to_string(),
                    a.to_string(),
                    b.to_string(),
                    c.to_string(),
                    (*c as f64 / (z.len().max(1) as f64 * width)).to_string(),
                    ((std_normal_cdf(b) - std_normal_cdf(a)) / width).to_string(),
                ]);
            }
            let tail = z.iter().filter(|x| x.abs() > 1.96).count() as f64 / z.len().max(1) as f64;
            panels.push(json!({
                "policy": label,
                "estimator": kind,
                "samples": z.len(),
                "tail_mass": tail,
                "ks_distance": ks_distance_normal(&z),
                "rejection_rate": s.rate(kind),
            }));
        }
    }
    Ok((table, json!({ "panels": panels })))
}

fn undercoverage_sweep(opts: &FigureOptions) -> Result<(FigureTable, Value)> {
    let mut table = FigureTable::new(&["n", "margin", "estimator", "coverage", "se"]);
    for &n in &opts.sizes {
        for &m in &opts.margins {
            let mut spec = base_spec(n, 25, PolicySpec::thompson(), (0.05, 0.95), opts.seed);
            spec.sigma_known = true;
            spec.trend = TrendSpec::Constant { beta0: 0.0, beta1: m };
            let p = plan(spec, opts).with_estimators(&[EstimatorKind::Ols, EstimatorKind::Bols]);
            let s = run(&p, opts)?;
            for e in &s.estimators {
                table.push(vec![
                    n.to_string(),
                    m.to_string(),
                    e.estimator.to_string(),
                    e.coverage.unwrap_or(f64::NAN).to_string(),
                    e.coverage_se.unwrap_or(f64::NAN).to_string(),
                ]);
            }
        }
    }
    Ok((table, json!({ "nominal": 1.0 - opts.alpha })))
}

fn stationary(opts: &FigureOptions, margin: f64) -> Result<(FigureTable, Value)> {
    let mut table = FigureTable::new(&RATE_COLUMNS);
    for (label, policy) in policies() {
        for &t in &opts.horizons {
            let mut spec = base_spec(25, t, policy.clone(), (0.1, 0.9), opts.seed);
            spec.trend = TrendSpec::Constant { beta0: margin, beta1: 0.0 };
            let mut p = plan(spec, opts).with_estimators(&MARGIN_TESTS);
            if margin != 0.0 {
                p.calibration = Calibration::NullCalibrated;
            }
            rate_rows(&mut table, label, t, &run(&p, opts)?);
        }
    }
    Ok((table, json!({ "beta0": margin, "beta1": 0.0, "n": 25 })))
}

fn nonstationary_baseline(opts: &FigureOptions) -> Result<(FigureTable, Value)> {
    let mut columns = vec!["baseline", "margin"];
    columns.extend(RATE_COLUMNS);
    let mut table = FigureTable::new(&columns);
    for (shape, baseline) in [("quadratic", Baseline::Quadratic), ("sinusoidal", Baseline::Sinusoidal)] {
        for margin in [0.0, opts.power_margin] {
            let mut inner = FigureTable::new(&RATE_COLUMNS);
            for (label, policy) in policies() {
                for &t in &opts.horizons {
                    let mut spec = base_spec(25, t, policy.clone(), (0.1, 0.9), opts.seed);
                    spec.trend = TrendSpec::BaselineShift {
                        margin: -margin,
                        baseline: baseline.clone(),
                        amplitude: opts.baseline_amplitude,
                        period: None,
                    };
                    let mut p = plan(spec, opts).with_estimators(&MARGIN_TESTS);
                    if margin != 0.0 {
                        p.calibration = Calibration::NullCalibrated;
                    }
                    rate_rows(&mut inner, label, t, &run(&p, opts)?);
                }
            }
            for r in inner.rows {
                let mut row = vec![shape.to_string(), margin.to_string()];
                row.extend(r);
                table.push(row);
            }
        }
    }
    Ok((table, json!({ "amplitude": opts.baseline_amplitude, "n": 25 })))
}

fn nste_power(opts: &FigureOptions) -> Result<(FigureTable, Value)> {
    let mut columns = vec!["trend"];
    columns.extend(RATE_COLUMNS);
    let mut table = FigureTable::new(&columns);
    for (shape, baseline) in [("decreasing", Baseline::Quadratic), ("oscillating", Baseline::Sinusoidal)] {
        let mut inner = FigureTable::new(&RATE_COLUMNS);
        for (label, policy) in policies() {
            for &t in &opts.horizons {
                let curve = build_trend(
                    &TrendSpec::BaselineShift {
                        margin: 0.0,
                        baseline: baseline.clone(),
                        amplitude: opts.trend_amplitude,
                        period: None,
                    },
                    t,
                )?;
                let mut spec = base_spec(25, t, policy.clone(), (0.1, 0.9), opts.seed);
                spec.trend = TrendSpec::Explicit {
                    pairs: curve.into_iter().map(|(b, _)| (0.0, b)).collect(),
                };
                let p = plan(spec, opts).with_estimators(&[EstimatorKind::BolsNste, EstimatorKind::Bols]);
                rate_rows(&mut inner, label, t, &run(&p, opts)?);
            }
        }
        for r in inner.rows {
            let mut row = vec![shape.to_string()];
            row.extend(r);
            table.push(row);
        }
    }
    Ok((table, json!({ "amplitude": opts.trend_amplitude, "n": 25 })))
}

/// Runs the named experiment and writes its files when `opts.out` is set.
pub fn reproduce_figure(name: &str, opts: &FigureOptions) -> Result<FigureOutput> {
    let figure: Figure = name.parse()?;
    if opts.reps == 0 || opts.bins == 0 {
        return Err(Error::InvalidArgument("reps and bins must be positive".into()));
    }
    let (table, details) = match figure {
        Figure::ZstatHist => zstat_hist(opts)?,
        Figure::UndercoverageSweep => undercoverage_sweep(opts)?,
        Figure::Type1Stationary => stationary(opts, 0.0)?,
        Figure::PowerStationary => stationary(opts, opts.power_margin)?,
        Figure::NonstationaryBaseline => nonstationary_baseline(opts)?,
        Figure::NstePower => nste_power(opts)?,
    };
    let details = json!({ "figure": figure, "options": opts, "details": details });
    let mut files = Vec::new();
    if let Some(dir) = &opts.out {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{figure}.csv"));
        table.write_csv(fs::File::create(&csv_path)?)?;
        let json_path = dir.join(format!("{figure}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(&details)?)?;
        files = vec![csv_path, json_path];
    }
    Ok(FigureOutput {
        figure,
        table,
        details,
        files,
    })
}
