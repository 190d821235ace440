//! Run-length experiments and their reduction to ARL profiles and
//! EQL / RARL / PCI summaries.
//!
//! Replication `r` of an experiment seeded with `s` always draws from
//! `RngStream::new(s).child(r)`, whatever the shift or worker count, so every
//! point of an ARL curve shares common random numbers and results are
//! bit-identical across thread pools. Reductions use integer accumulators.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chart::{ChartConfig, ControlLimits};
use crate::error::{invalid, Error, Result};
use crate::estimators::{subgroup_stats, Estimator, EstimatorKind};
use crate::process::{sample_subgroup, ProcessParameters, RngStream, ShiftSpec, SummarySampler};

/// Default run-length cap.
pub const DEFAULT_CAP: u64 = 10_000_000;
/// Smallest replication count accepted by [`arl`].
pub const MIN_ARL_REPS: u64 = 10_000;
/// Consecutive degenerate subgroups tolerated before giving up.
const MAX_CONSECUTIVE_REDRAWS: u32 = 1_000;

/// How subgroups are generated during simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Exact draw of the subgroup summary statistics.
    #[default]
    Summary,
    /// Draw all `n` pairs and compute the sample moments.
    Pairs,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "summary" => Ok(Self::Summary),
            "pairs" => Ok(Self::Pairs),
            other => Err(invalid(format!("unknown sampling mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimOptions {
    pub sampling: Sampling,
    pub cap: u64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { sampling: Sampling::Summary, cap: DEFAULT_CAP }
    }
}

/// Draws charting statistics for one chart under a given process.
#[derive(Debug, Clone)]
pub struct StatisticSampler {
    estimator: Estimator,
    summary: SummarySampler,
    sampling: Sampling,
}

impl StatisticSampler {
    pub fn new(config: &ChartConfig, params: &ProcessParameters, sampling: Sampling) -> Result<Self> {
        Ok(Self {
            estimator: Estimator::new(config.kind, *params, config.n, config.weights)?,
            summary: SummarySampler::new(*params, config.n)?,
            sampling,
        })
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    /// One statistic value; degenerate subgroups are redrawn and counted.
    #[inline]
    pub fn draw(&self, shift: ShiftSpec, rng: &mut RngStream, redraws: &mut u64) -> Result<f64> {
        let mut attempts = 0;
        loop {
            match self.try_draw(shift, rng) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    *redraws += 1;
                    attempts += 1;
                    if attempts >= MAX_CONSECUTIVE_REDRAWS {
                        return Err(e);
                    }
                }
            }
        }
    }

    #[inline]
    fn try_draw(&self, shift: ShiftSpec, rng: &mut RngStream) -> Result<f64> {
        match self.sampling {
            Sampling::Summary if !self.estimator.kind().needs_dispersion() => {
                let (y_bar, x_bar) = self.summary.means(shift, rng);
                self.estimator.evaluate_means(y_bar, x_bar)
            }
            Sampling::Summary => self.estimator.evaluate(&self.summary.stats(shift, rng)),
            Sampling::Pairs => {
                let g = sample_subgroup(self.estimator.params(), self.summary.n(), shift, rng)?;
                self.estimator.evaluate(&subgroup_stats(&g))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunLength {
    pub length: u64,
    pub capped: bool,
    pub redraws: u64,
}

impl StatisticSampler {
    /// Subgroups drawn until the statistic leaves `[lcl, ucl]`, at most `cap`.
    pub fn run_length(&self, limits: &ControlLimits, shift: ShiftSpec, rng: &mut RngStream, cap: u64) -> Result<RunLength> {
        let mut redraws = 0;
        for i in 1..=cap {
            let v = self.draw(shift, rng, &mut redraws)?;
            if !limits.contains(v) {
                return Ok(RunLength { length: i, capped: false, redraws });
            }
        }
        Ok(RunLength { length: cap, capped: true, redraws })
    }
}

/// 1-based index of the first subgroup whose statistic leaves the limits, or
/// `cap` when none does.
pub fn run_length(
    config: &ChartConfig,
    limits: &ControlLimits,
    params: &ProcessParameters,
    shift: ShiftSpec,
    stream: &mut RngStream,
    cap: u64,
) -> Result<u64> {
    if cap == 0 {
        return Err(invalid("run-length cap must be positive"));
    }
    let sampler = StatisticSampler::new(config, params, SimOptions::default().sampling)?;
    Ok(sampler.run_length(limits, shift, stream, cap)?.length)
}

/// Exact integer accumulator of run lengths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct RunLengthTally {
    pub reps: u64,
    pub sum: u64,
    pub sum_sq: u128,
    pub capped: u64,
    pub redraws: u64,
}

impl RunLengthTally {
    pub fn push(mut self, rl: RunLength) -> Self {
        self.reps += 1;
        self.sum += rl.length;
        self.sum_sq += u128::from(rl.length) * u128::from(rl.length);
        self.capped += u64::from(rl.capped);
        self.redraws += rl.redraws;
        self
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            reps: self.reps + o.reps,
            sum: self.sum + o.sum,
            sum_sq: self.sum_sq + o.sum_sq,
            capped: self.capped + o.capped,
            redraws: self.redraws + o.redraws,
        }
    }

    pub fn mean(&self) -> f64 {
        self.sum as f64 / self.reps as f64
    }

    /// Sample standard deviation (`reps - 1` divisor).
    pub fn sd(&self) -> f64 {
        if self.reps < 2 {
            return 0.0;
        }
        let r = u128::from(self.reps);
        let s = u128::from(self.sum);
        // r * sum_sq - sum^2 is exact and non-negative
        let num = r * self.sum_sq - s * s;
        (num as f64 / (self.reps as f64 * (self.reps - 1) as f64)).sqrt()
    }
}

/// ARL, SDRL and standard error at one shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArlEntry {
    pub delta: f64,
    pub arl: f64,
    pub sdrl: f64,
    pub se: f64,
    pub reps: u64,
    pub capped: u64,
    pub redraws: u64,
}

impl ArlEntry {
    fn from_tally(delta: f64, t: &RunLengthTally) -> Self {
        let sdrl = t.sd();
        Self {
            delta,
            arl: t.mean(),
            sdrl,
            se: sdrl / (t.reps as f64).sqrt(),
            reps: t.reps,
            capped: t.capped,
            redraws: t.redraws,
        }
    }
}

fn tally_runs(
    sampler: &StatisticSampler,
    limits: &ControlLimits,
    shift: ShiftSpec,
    reps: u64,
    seed: u64,
    cap: u64,
) -> Result<RunLengthTally> {
    let root = RngStream::new(seed);
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = root.child(r);
            sampler.run_length(limits, shift, &mut rng, cap)
        })
        .try_fold(RunLengthTally::default, |acc, rl| rl.map(|rl| acc.push(rl)))
        .try_reduce(RunLengthTally::default, |a, b| Ok(a.merge(b)))
}

pub fn arl(
    config: &ChartConfig,
    limits: &ControlLimits,
    params: &ProcessParameters,
    shift: ShiftSpec,
    reps: u64,
    seed: u64,
) -> Result<ArlEntry> {
    arl_with(config, limits, params, shift, reps, seed, &SimOptions::default())
}

pub fn arl_with(
    config: &ChartConfig,
    limits: &ControlLimits,
    params: &ProcessParameters,
    shift: ShiftSpec,
    reps: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<ArlEntry> {
    if reps < MIN_ARL_REPS {
        return Err(Error::Precision(format!("ARL needs at least {MIN_ARL_REPS} replications, got {reps}")));
    }
    let sampler = StatisticSampler::new(config, params, opts.sampling)?;
    let tally = tally_runs(&sampler, limits, shift, reps, seed, opts.cap)?;
    Ok(ArlEntry::from_tally(shift.delta(), &tally))
}

/// Strictly increasing shift magnitudes starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ShiftGrid {
    deltas: Vec<f64>,
}

impl ShiftGrid {
    pub fn new(deltas: Vec<f64>) -> Result<Self> {
        if deltas.first() != Some(&0.0) {
            return Err(invalid("shift grid must start at 0"));
        }
        if deltas.iter().any(|d| !d.is_finite()) || deltas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("shift grid must be finite and strictly increasing"));
        }
        Ok(Self { deltas })
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }
}

impl Default for ShiftGrid {
    fn default() -> Self {
        Self { deltas: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0] }
    }
}

impl TryFrom<Vec<f64>> for ShiftGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ShiftGrid::new(v)
    }
}

impl From<ShiftGrid> for Vec<f64> {
    fn from(g: ShiftGrid) -> Self {
        g.deltas
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArlProfile {
    pub entries: Vec<ArlEntry>,
}

pub const PROFILE_CSV_HEADER: &str = "delta,arl,sdrl,se,reps,capped";

impl ArlProfile {
    pub fn deltas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.delta).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(PROFILE_CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{},{},{},{}", e.delta, e.arl, e.sdrl, e.se, e.reps, e.capped);
        }
        out
    }
}

/// ARL at every grid shift, with common random numbers across shifts.
pub fn arl_curve(
    config: &ChartConfig,
    limits: &ControlLimits,
    params: &ProcessParameters,
    grid: &ShiftGrid,
    reps: u64,
    seed: u64,
) -> Result<ArlProfile> {
    arl_curve_with(config, limits, params, grid, reps, seed, &SimOptions::default())
}

pub fn arl_curve_with(
    config: &ChartConfig,
    limits: &ControlLimits,
    params: &ProcessParameters,
    grid: &ShiftGrid,
    reps: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<ArlProfile> {
    let entries = grid
        .deltas()
        .iter()
        .map(|&d| arl_with(config, limits, params, ShiftSpec::new(d)?, reps, seed, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArlProfile { entries })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceSummary {
    pub kind: EstimatorKind,
    pub eql: f64,
    pub rarl: f64,
    pub pci: f64,
    pub benchmark: EstimatorKind,
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2).zip(ys.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
}

/// Positive-shift part of a profile: `(deltas, arls)`.
fn positive_part(p: &ArlProfile) -> (Vec<f64>, Vec<f64>) {
    p.entries.iter().filter(|e| e.delta > 0.0).map(|e| (e.delta, e.arl)).unzip()
}

/// Extra quadratic loss, `1/(d_max - d_min) * integral of d^2 ARL(d)` over the
/// positive shifts (trapezoidal rule).
pub fn eql(profile: &ArlProfile) -> Result<f64> {
    let (d, a) = positive_part(profile);
    if d.len() < 3 {
        return Err(invalid("EQL needs at least 3 positive shifts"));
    }
    let weighted: Vec<f64> = d.iter().zip(&a).map(|(d, a)| d * d * a).collect();
    Ok(trapezoid(&d, &weighted) / (d[d.len() - 1] - d[0]))
}

/// Chart with the smallest EQL.
pub fn eql_minimal(profiles: &BTreeMap<EstimatorKind, ArlProfile>) -> Result<EstimatorKind> {
    let mut best: Option<(EstimatorKind, f64)> = None;
    for (&k, p) in profiles {
        let e = eql(p)?;
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((k, e));
        }
    }
    best.map(|(k, _)| k).ok_or_else(|| invalid("no profiles given"))
}

/// EQL, RARL and PCI of every chart relative to `benchmark`.
pub fn performance_summary(
    profiles: &BTreeMap<EstimatorKind, ArlProfile>,
    benchmark: EstimatorKind,
) -> Result<BTreeMap<EstimatorKind, PerformanceSummary>> {
    let bench = profiles
        .get(&benchmark)
        .ok_or_else(|| invalid(format!("benchmark {benchmark} has no profile")))?;
    let grid = bench.deltas();
    if let Some((k, _)) = profiles.iter().find(|(_, p)| p.deltas() != grid) {
        return Err(invalid(format!("profile {k} uses a different shift grid than {benchmark}")));
    }
    let (d, bench_arl) = positive_part(bench);
    let bench_eql = eql(bench)?;
    let span = d[d.len() - 1] - d[0];
    profiles
        .iter()
        .map(|(&kind, p)| {
            let (_, a) = positive_part(p);
            let ratio: Vec<f64> = a.iter().zip(&bench_arl).map(|(x, b)| x / b).collect();
            let e = eql(p)?;
            Ok((
                kind,
                PerformanceSummary { kind, eql: e, rarl: trapezoid(&d, &ratio) / span, pci: e / bench_eql, benchmark },
            ))
        })
        .collect()
}
