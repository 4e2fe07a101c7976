//! Trajectory reconstruction from window velocities and the ATE, RTE and
//! ALE error metrics with length-normalized aggregates.
//!
//! Metrics are computed in the shared world frame with the ground-truth start
//! as origin; no rigid alignment is applied before ATE.

mod eval;
mod metrics;

pub use eval::{
    cdf, check_rate, evaluate, evaluate_sequence, read_aggregates, read_report_rows, write_report,
    EvalOptions, MetricReport, TrajectoryMetrics, VelocityPredictor, AGGREGATES_FILE, CDF_ATE_FILE,
    CDF_RTE_FILE, REPORT_FILE,
};
pub use metrics::{
    ale, ate, gt_length, lengths, normalize, path_length, position_at, reconstruct, rte,
    TrajectoryEstimate,
};
