//! Shared setup for the benchmarks.

use spc_aux_core::{limits_three_sigma, ChartConfig, ControlLimits, EstimatorKind, LimitStyle, ProcessParameters, Subgroup};

/// Process with means 5, unit sigmas (`C_y = C_x = 0.2`) and correlation `rho`.
pub fn standard_params(rho: f64) -> ProcessParameters {
    ProcessParameters::new(5.0, 5.0, 1.0, 1.0, rho).expect("valid parameters")
}

/// Three-sigma chart with coefficient `l` and its limits.
pub fn chart(kind: EstimatorKind, n: usize, l: f64, params: &ProcessParameters) -> (ChartConfig, ControlLimits) {
    let cfg = ChartConfig::new(kind, n, LimitStyle::ThreeSigmaScaled, l, 370.4).expect("valid config");
    let limits = limits_three_sigma(&cfg, params).expect("valid limits");
    (cfg, limits)
}

pub fn fixed_subgroup(n: usize) -> Subgroup {
    let pairs = (0..n).map(|i| (5.0 + (i as f64 * 0.37).sin(), 5.0 + (i as f64 * 0.41).cos())).collect();
    Subgroup::new(pairs).expect("n >= 2")
}
