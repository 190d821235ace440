//! Shewhart-type process-mean control charts that borrow strength from a
//! correlated auxiliary variable.
//!
//! The crate provides four charting statistics ([`EstimatorKind`]), control
//! limits in three-sigma and probability styles, Monte Carlo calibration of
//! the limit coefficient to a target in-control ARL, run-length simulation over
//! shift grids, and EQL / RARL / PCI comparisons.

pub mod chart;
pub mod error;
pub mod estimators;
pub mod process;
pub mod simulation;

pub use chart::{
    calibrate, calibrate_with, limits_probability, limits_probability_with, limits_three_sigma, monitor, Calibration, CalibrationRecord,
    ChartConfig, ControlLimits, LimitStyle, ReferenceDistribution, SignalReport,
};
pub use error::{Error, Result};
pub use estimators::{
    subgroup_stats, t0, t1, t2, t3, theoretical_mse, weights_for, Estimator, EstimatorKind, EstimatorWeights,
    SubgroupStats, WeightSource,
};
pub use process::{sample_subgroup, ProcessParameters, RngStream, ShiftSpec, Subgroup, SummarySampler};
pub use simulation::{
    arl, arl_curve, arl_curve_with, arl_with, eql, eql_minimal, performance_summary, run_length, ArlEntry,
    ArlProfile, PerformanceSummary, Sampling, ShiftGrid, SimOptions, StatisticSampler,
};
