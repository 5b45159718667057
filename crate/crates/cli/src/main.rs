use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use batchinf::harness::{self, Calibration, FigureOptions, McPlan};
use batchinf::inference::bands_from_batches;
use batchinf::model::simulate;
use batchinf::{ExperimentSpec, Streams, Trajectory, Variance};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "batchinf", version, about = "Simulate batched bandit experiments and test the arm margin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON input file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Output directory; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-replication statistics.
    #[arg(long)]
    raw: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory from an experiment spec.
    Simulate(Common),
    /// Run a Monte Carlo plan.
    Mc(Common),
    /// Null critical values for a plan; the margin is removed first.
    Calibrate(Common),
    /// Data behind one of the standard figures.
    Figure {
        name: String,
        #[command(flatten)]
        common: Common,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Simultaneous confidence bands from a logged trajectory.
    Bands {
        #[command(flatten)]
        common: Common,
        /// Known noise variance; estimated per batch when omitted.
        #[arg(long)]
        sigma2: Option<f64>,
    },
}

fn read_config(common: &Common) -> Result<String> {
    let path = common.config.as_ref().context("--config is required")?;
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn emit(out: Option<&Path>, file: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join(file);
            fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{contents}"),
    }
    Ok(())
}

fn load_plan(common: &Common) -> Result<McPlan> {
    let mut plan: McPlan = serde_json::from_str(&read_config(common)?).context("parsing plan")?;
    if let Some(s) = common.seed {
        plan.seed = Some(s);
    }
    if let Some(r) = common.reps {
        plan.reps = r;
    }
    if let Some(a) = common.alpha {
        plan.alpha = a;
    }
    plan.raw |= common.raw;
    plan.validate()?;
    Ok(plan)
}

fn simulate_cmd(common: &Common) -> Result<()> {
    let mut spec = ExperimentSpec::<f64>::from_json(&read_config(common)?)?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let traj = simulate(&spec, Streams::new(spec.seed))?;
    emit(common.out.as_deref(), "trajectory.json", &serde_json::to_string_pretty(&traj)?)
}

fn mc_cmd(common: &Common) -> Result<()> {
    let plan = load_plan(common)?;
    let summary = harness::monte_carlo(&plan)?;
    let out = common.out.as_deref().or(plan.output.summary.as_deref().and_then(Path::parent));
    emit(out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    if plan.raw {
        let path = match (out, &plan.output.raw) {
            (Some(dir), _) => dir.join("raw.csv"),
            (None, Some(p)) => p.clone(),
            (None, None) => bail!("--raw needs --out or output.raw in the plan"),
        };
        summary.write_raw_csv(fs::File::create(&path)?)?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn calibrate_cmd(common: &Common) -> Result<()> {
    let plan = load_plan(common)?.to_null()?.with_calibration(Calibration::TheoreticalCutoffs);
    let cutoffs = harness::calibrate_cutoffs(&plan)?;
    emit(common.out.as_deref(), "cutoffs.json", &serde_json::to_string_pretty(&cutoffs)?)
}

fn figure_cmd(name: &str, common: &Common, threads: Option<usize>) -> Result<()> {
    let mut opts: FigureOptions = match &common.config {
        Some(_) => serde_json::from_str(&read_config(common)?).context("parsing figure options")?,
        None => FigureOptions::default(),
    };
    if let Some(s) = common.seed {
        opts.seed = s;
    }
    if let Some(r) = common.reps {
        opts.reps = r;
    }
    if let Some(a) = common.alpha {
        opts.alpha = a;
    }
    if common.out.is_some() {
        opts.out = common.out.clone();
    }
    opts.threads = threads.or(opts.threads);
    let output = harness::reproduce_figure(name, &opts)?;
    if output.files.is_empty() {
        let mut buf = Vec::new();
        output.table.write_csv(&mut buf)?;
        print!("{}", String::from_utf8(buf)?);
    }
    for f in &output.files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn bands_cmd(common: &Common, sigma2: Option<f64>) -> Result<()> {
    let traj = Trajectory::<f64>::from_json(&read_config(common)?)?;
    let alpha = common.alpha.unwrap_or(0.05);
    let variance = match sigma2 {
        Some(s) => Variance::Known(s),
        None => Variance::Estimated,
    };
    let set = bands_from_batches(&traj.batches, alpha, &variance)?;
    let mut buf = Vec::new();
    set.write_csv(&mut buf)?;
    emit(common.out.as_deref(), "bands.csv", String::from_utf8(buf)?.trim_end())?;
    if common.out.is_some() {
        emit(common.out.as_deref(), "bands.json", &serde_json::to_string_pretty(&set)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(c) => simulate_cmd(&c),
        Command::Mc(c) => mc_cmd(&c),
        Command::Calibrate(c) => calibrate_cmd(&c),
        Command::Figure { name, common, threads } => figure_cmd(&name, &common, threads),
        Command::Bands { common, sigma2 } => bands_cmd(&common, sigma2),
    }
}
