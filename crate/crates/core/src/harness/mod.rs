//! Monte Carlo experiments: replications, aggregation, null calibration and
//! figure data.

mod figures;
mod plan;
mod replication;
mod summary;

pub use figures::{histogram, ks_distance_normal, reproduce_figure, Figure, FigureOptions, FigureOutput, FigureTable};
pub use plan::{variance_mode, Calibration, McPlan, OutputPaths};
pub use replication::{run_replication, EstimatorOutcome, ReplicationContext, ReplicationOutcome};
pub use summary::{
    binomial_se, calibrate_cutoffs, calibrate_cutoffs_with, monte_carlo, monte_carlo_with, CalibratedCutoff,
    EstimatorSummary, McSummary,
};
