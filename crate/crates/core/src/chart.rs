//! Control limits, Monte Carlo calibration of the limit coefficient and
//! signal detection.
//!
//! Limits are centred on known in-control parameters. `three_sigma_scaled`
//! limits are `mu_y -/+ L * se` where `se` is the statistic's first-order
//! standard error; `probability_quantile` limits are the empirical `alpha/2`
//! and `1 - alpha/2` quantiles of simulated in-control statistics.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::estimators::{theoretical_mse, EstimatorKind, WeightSource};
use crate::process::{ProcessParameters, RngStream, ShiftSpec};
use crate::simulation::{RunLengthTally, SimOptions, StatisticSampler};

/// Smallest in-control sample accepted for probability limits and calibration.
pub const MIN_REFERENCE_SIZE: u64 = 100_000;
/// Coefficient search range for `three_sigma_scaled` limits.
pub const THREE_SIGMA_RANGE: (f64, f64) = (0.5, 6.0);
/// Total tail probability search range for `probability_quantile` limits.
pub const PROBABILITY_RANGE: (f64, f64) = (1e-7, 0.5);

const REFERENCE_CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitStyle {
    ThreeSigmaScaled,
    ProbabilityQuantile,
}

impl fmt::Display for LimitStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ThreeSigmaScaled => "three_sigma_scaled",
            Self::ProbabilityQuantile => "probability_quantile",
        })
    }
}

impl std::str::FromStr for LimitStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "three_sigma_scaled" => Ok(Self::ThreeSigmaScaled),
            "probability_quantile" => Ok(Self::ProbabilityQuantile),
            other => Err(invalid(format!("unknown limit style {other:?}"))),
        }
    }
}

/// Chart design. `coefficient` is the multiplier `L` for `three_sigma_scaled`
/// limits and the total false-alarm probability `alpha` (split equally between
/// the tails) for `probability_quantile` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub kind: EstimatorKind,
    pub n: usize,
    pub style: LimitStyle,
    pub coefficient: f64,
    pub target_arl0: f64,
    #[serde(default)]
    pub weights: WeightSource,
}

impl ChartConfig {
    pub fn new(kind: EstimatorKind, n: usize, style: LimitStyle, coefficient: f64, target_arl0: f64) -> Result<Self> {
        let c = Self { kind, n, style, coefficient, target_arl0, weights: WeightSource::default() };
        c.validate()?;
        Ok(c)
    }

    pub fn with_weights(mut self, weights: WeightSource) -> Self {
        self.weights = weights;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("subgroup size must be at least 2, got {}", self.n)));
        }
        if !(self.coefficient > 0.0 && self.coefficient.is_finite()) {
            return Err(invalid(format!("limit coefficient must be positive, got {}", self.coefficient)));
        }
        if self.style == LimitStyle::ProbabilityQuantile && self.coefficient >= 1.0 {
            return Err(invalid(format!("tail probability must lie in (0, 1), got {}", self.coefficient)));
        }
        if !(self.target_arl0 > 1.0 && self.target_arl0.is_finite()) {
            return Err(invalid(format!("target in-control ARL must exceed 1, got {}", self.target_arl0)));
        }
        Ok(())
    }

    fn with_coefficient(&self, coefficient: f64) -> Self {
        Self { coefficient, ..*self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    lcl: f64,
    cl: f64,
    ucl: f64,
}

impl ControlLimits {
    pub fn new(lcl: f64, cl: f64, ucl: f64) -> Result<Self> {
        if !(lcl < cl && cl < ucl) {
            return Err(invalid(format!("limits must satisfy lcl < cl < ucl, got ({lcl}, {cl}, {ucl})")));
        }
        Ok(Self { lcl, cl, ucl })
    }

    pub fn lcl(&self) -> f64 {
        self.lcl
    }

    pub fn cl(&self) -> f64 {
        self.cl
    }

    pub fn ucl(&self) -> f64 {
        self.ucl
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lcl && v <= self.ucl
    }
}

/// Out-of-control flags over a sequence of statistics. Indices are 1-based
/// subgroup numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalReport {
    pub signal_indices: Vec<usize>,
    pub first_signal_after: Option<usize>,
}

impl SignalReport {
    /// Flags every value outside `[lower, upper]`.
    pub fn scan(values: &[f64], lower: f64, upper: f64, changepoint: Option<usize>) -> Self {
        let signal_indices: Vec<usize> = values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v < lower || v > upper)
            .map(|(i, _)| i + 1)
            .collect();
        let first_signal_after = changepoint.and_then(|c| signal_indices.iter().copied().find(|&i| i > c));
        Self { signal_indices, first_signal_after }
    }
}

pub fn monitor(statistics: &[f64], limits: &ControlLimits, changepoint: Option<usize>) -> SignalReport {
    SignalReport::scan(statistics, limits.lcl, limits.ucl, changepoint)
}

/// `mu_y -/+ L * se` with the statistic's own first-order standard error.
pub fn limits_three_sigma(config: &ChartConfig, params: &ProcessParameters) -> Result<ControlLimits> {
    if config.style != LimitStyle::ThreeSigmaScaled {
        return Err(invalid("limits_three_sigma needs a three_sigma_scaled config"));
    }
    config.validate()?;
    let se = standard_error(config, params)?;
    let cl = params.mu_y();
    ControlLimits::new(cl - config.coefficient * se, cl, cl + config.coefficient * se)
}

fn standard_error(config: &ChartConfig, params: &ProcessParameters) -> Result<f64> {
    let mse = theoretical_mse(config.kind, params, config.n)?;
    if !(mse > 0.0 && mse.is_finite()) {
        return Err(invalid(format!("{} has non-positive first-order MSE {mse} for these parameters", config.kind)));
    }
    Ok(mse.sqrt())
}

/// Sorted in-control statistics with a piecewise-linear quantile function.
#[derive(Debug, Clone)]
pub struct ReferenceDistribution {
    sorted: Vec<f64>,
}

impl ReferenceDistribution {
    /// Draws `m` in-control statistics; chunk `c` of 4096 draws uses
    /// `stream.child(c)`.
    pub fn simulate(config: &ChartConfig, params: &ProcessParameters, m: u64, stream: &RngStream, opts: &SimOptions) -> Result<Self> {
        let sampler = StatisticSampler::new(config, params, opts.sampling)?;
        let chunks = m.div_ceil(REFERENCE_CHUNK);
        let parts = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream.child(c);
                let len = REFERENCE_CHUNK.min(m - c * REFERENCE_CHUNK);
                let mut redraws = 0;
                (0..len)
                    .map(|_| sampler.draw(ShiftSpec::IN_CONTROL, &mut rng, &mut redraws))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sorted: Vec<f64> = parts.into_iter().flatten().collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Linear-interpolation quantile (`h = p (m - 1)`).
    pub fn quantile(&self, p: f64) -> f64 {
        let h = p.clamp(0.0, 1.0) * (self.sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(self.sorted.len() - 1);
        self.sorted[lo] + (h - lo as f64) * (self.sorted[hi] - self.sorted[lo])
    }

    /// Inverse of [`ReferenceDistribution::quantile`], clamped to `[0, 1]`.
    pub fn cdf(&self, t: f64) -> f64 {
        let s = &self.sorted;
        let last = s.len() - 1;
        if t < s[0] {
            return 0.0;
        }
        if t >= s[last] {
            return 1.0;
        }
        let j = s.partition_point(|&v| v <= t) - 1;
        let width = s[j + 1] - s[j];
        let frac = if width > 0.0 { (t - s[j]) / width } else { 0.0 };
        (j as f64 + frac) / last as f64
    }
}

/// Empirical-quantile limits from `m` simulated in-control statistics.
pub fn limits_probability(config: &ChartConfig, params: &ProcessParameters, m: u64, stream: &RngStream) -> Result<ControlLimits> {
    limits_probability_with(config, params, m, stream, &SimOptions::default())
}

pub fn limits_probability_with(
    config: &ChartConfig,
    params: &ProcessParameters,
    m: u64,
    stream: &RngStream,
    opts: &SimOptions,
) -> Result<ControlLimits> {
    if config.style != LimitStyle::ProbabilityQuantile {
        return Err(invalid("limits_probability needs a probability_quantile config"));
    }
    config.validate()?;
    if m < MIN_REFERENCE_SIZE {
        return Err(Error::Precision(format!(
            "probability limits need at least {MIN_REFERENCE_SIZE} in-control draws, got {m}"
        )));
    }
    let reference = ReferenceDistribution::simulate(config, params, m, stream, opts)?;
    probability_limits_from(&reference, config.coefficient)
}

fn probability_limits_from(reference: &ReferenceDistribution, alpha: f64) -> Result<ControlLimits> {
    ControlLimits::new(reference.quantile(alpha / 2.0), reference.quantile(0.5), reference.quantile(1.0 - alpha / 2.0))
}

/// Maps statistics to a score that exceeds `threshold(coefficient)` exactly
/// when the statistic falls outside the limits built with that coefficient.
/// Larger thresholds mean wider limits.
enum Exceedance {
    Band { cl: f64, se: f64 },
    Tail(ReferenceDistribution),
}

impl Exceedance {
    #[inline]
    fn score(&self, t: f64) -> f64 {
        match self {
            Self::Band { cl, se } => (t - cl).abs() / se,
            Self::Tail(r) => {
                let f = r.cdf(t);
                -2.0 * f.min(1.0 - f)
            }
        }
    }

    fn coefficient(&self, threshold: f64) -> f64 {
        match self {
            Self::Band { .. } => threshold,
            Self::Tail(_) => -threshold,
        }
    }

    /// Threshold range, narrowest limits first.
    fn range(&self) -> (f64, f64) {
        match self {
            Self::Band { .. } => THREE_SIGMA_RANGE,
            Self::Tail(_) => (-PROBABILITY_RANGE.1, -PROBABILITY_RANGE.0),
        }
    }
}

/// Running-maximum records of one replication's score sequence: the run length
/// at threshold `h` is the index of the first record above `h`.
#[derive(Debug, Clone, Default)]
struct Records {
    points: Vec<(u64, f64)>,
    redraws: u64,
}

impl Records {
    fn run_length(&self, threshold: f64, cap: u64) -> (u64, bool) {
        self.points
            .iter()
            .find(|(_, s)| *s > threshold)
            .map_or((cap, true), |&(i, _)| (i, false))
    }
}

/// Outcome of [`calibrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub config: ChartConfig,
    pub limits: ControlLimits,
    pub achieved_arl: f64,
    pub arl_se: f64,
    pub capped_runs: u64,
    pub redraws: u64,
}

/// Adjusts the limit coefficient until the simulated in-control ARL is within
/// `target * (1 +/- tolerance)`.
///
/// Every probe re-uses the same `budget` replications (common random numbers),
/// which makes the simulated ARL a monotone step function of the coefficient;
/// the search is a bisection on it. Replication `r` draws from
/// `stream.child(1).child(r)`. An in-control pilot sample drawn from
/// `stream.child(0)` locates the bracket and, for probability limits, is the
/// reference distribution itself, so
/// `limits_probability(&result.config, params, budget, &stream.child(0))`
/// reproduces `result.limits`.
pub fn calibrate(
    config: &ChartConfig,
    params: &ProcessParameters,
    budget: u64,
    tolerance: f64,
    stream: &RngStream,
) -> Result<Calibration> {
    calibrate_with(config, params, budget, tolerance, stream, &SimOptions::default())
}

pub fn calibrate_with(
    config: &ChartConfig,
    params: &ProcessParameters,
    budget: u64,
    tolerance: f64,
    stream: &RngStream,
    opts: &SimOptions,
) -> Result<Calibration> {
    config.validate()?;
    if !(tolerance > 0.0 && tolerance < 1.0) {
        return Err(invalid(format!("tolerance must lie in (0, 1), got {tolerance}")));
    }
    if budget < MIN_REFERENCE_SIZE {
        return Err(Error::Precision(format!(
            "calibration needs at least {MIN_REFERENCE_SIZE} replications per probe, got {budget}"
        )));
    }
    // relative standard error of a geometric ARL estimate is ~ 1/sqrt(budget)
    let needed = (3.0 / tolerance).powi(2).ceil() as u64;
    if budget < needed {
        return Err(Error::Precision(format!(
            "tolerance {tolerance} needs at least {needed} replications per probe, got {budget}"
        )));
    }
    let target = config.target_arl0;
    // capped runs count at the cap, so targets near it are unreachable
    if target * (1.0 + tolerance) * 10.0 > opts.cap as f64 {
        return Err(Error::CalibrationRange(format!(
            "{}: target ARL {target} is too close to the run-length cap {}",
            config.kind, opts.cap
        )));
    }
    let sampler = StatisticSampler::new(config, params, opts.sampling)?;

    let pilot = ReferenceDistribution::simulate(config, params, budget, &stream.child(0), opts)?;
    let exceed = match config.style {
        LimitStyle::ThreeSigmaScaled => Exceedance::Band { cl: params.mu_y(), se: standard_error(config, params)? },
        LimitStyle::ProbabilityQuantile => Exceedance::Tail(pilot.clone()),
    };
    let mut pilot_scores: Vec<f64> = pilot.sorted.iter().map(|&t| exceed.score(t)).collect();
    pilot_scores.sort_by(f64::total_cmp);
    let m = pilot_scores.len() as f64;
    let exceed_frac = |h: f64| (pilot_scores.len() - pilot_scores.partition_point(|&s| s <= h)) as f64 / m;
    let score_quantile = |p: f64| pilot_scores[((p * m) as usize).min(pilot_scores.len() - 1)];

    let (h_min, h_max) = exceed.range();
    let p_narrow = exceed_frac(h_min);
    if p_narrow == 0.0 || 1.0 / p_narrow > target * (1.0 + tolerance) {
        return Err(Error::CalibrationRange(format!(
            "{}: target ARL {target} is below the ARL at the narrowest limits (coefficient {})",
            config.kind,
            exceed.coefficient(h_min)
        )));
    }
    let p_wide = exceed_frac(h_max);
    if p_wide > 0.0 && 1.0 / p_wide < target * (1.0 - tolerance) {
        return Err(Error::CalibrationRange(format!(
            "{}: target ARL {target} exceeds the ARL at the widest limits (coefficient {})",
            config.kind,
            exceed.coefficient(h_max)
        )));
    }

    let replications = stream.child(1);
    let simulate = |h_stop: f64| -> Result<Vec<Records>> {
        (0..budget)
            .into_par_iter()
            .map(|r| {
                let mut rng = replications.child(r);
                let mut rec = Records::default();
                let mut best = f64::NEG_INFINITY;
                for i in 1..=opts.cap {
                    let s = exceed.score(sampler.draw(ShiftSpec::IN_CONTROL, &mut rng, &mut rec.redraws)?);
                    if s > best {
                        best = s;
                        rec.points.push((i, s));
                        if s > h_stop {
                            break;
                        }
                    }
                }
                Ok(rec)
            })
            .collect()
    };
    let tally = |records: &[Records], h: f64| -> RunLengthTally {
        records.iter().fold(RunLengthTally::default(), |t, rec| {
            let (length, capped) = rec.run_length(h, opts.cap);
            t.push(crate::simulation::RunLength { length, capped, redraws: 0 })
        })
    };

    // upper end of the bracket: pilot estimate of the threshold at 1.3x target,
    // widened until the common-random-number ARL covers the target
    let mut growth = 1.3;
    let mut h_hi = score_quantile(1.0 - 1.0 / (growth * target)).clamp(h_min, h_max);
    let records = loop {
        let records = simulate(h_hi)?;
        if tally(&records, h_hi).mean() >= target {
            break records;
        }
        if h_hi >= h_max {
            return Err(Error::CalibrationRange(format!(
                "{}: simulated ARL at the widest limits stays below target {target}",
                config.kind
            )));
        }
        growth *= 2.0;
        let next = if growth * target < m { score_quantile(1.0 - 1.0 / (growth * target)) } else { h_max };
        h_hi = next.max(h_hi + 0.05 * (h_max - h_min).abs().min(1.0)).min(h_max);
    };
    let mut lo = h_min;
    let mut hi = h_hi;
    if tally(&records, lo).mean() > target * (1.0 + tolerance) {
        return Err(Error::CalibrationRange(format!(
            "{}: simulated ARL at the narrowest limits exceeds target {target}",
            config.kind
        )));
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let arl = tally(&records, mid).mean();
        if arl < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (arl / target - 1.0).abs() < tolerance * 1e-3 {
            break;
        }
    }
    let (t_lo, t_hi) = (tally(&records, lo), tally(&records, hi));
    let (h, best) = if (t_lo.mean() - target).abs() <= (t_hi.mean() - target).abs() { (lo, t_lo) } else { (hi, t_hi) };
    let achieved = best.mean();
    if (achieved / target - 1.0).abs() > tolerance {
        return Err(Error::Precision(format!(
            "{}: achieved ARL {achieved} is outside target {target} +/- {tolerance}",
            config.kind
        )));
    }

    let calibrated = config.with_coefficient(exceed.coefficient(h));
    log::debug!(
        "{} n={} target={target}: coefficient {} gives ARL {achieved}",
        config.kind,
        config.n,
        calibrated.coefficient
    );
    let limits = match &exceed {
        Exceedance::Band { .. } => limits_three_sigma(&calibrated, params)?,
        Exceedance::Tail(reference) => probability_limits_from(reference, calibrated.coefficient)?,
    };
    Ok(Calibration {
        config: calibrated,
        limits,
        achieved_arl: achieved,
        arl_se: best.sd() / (best.reps as f64).sqrt(),
        capped_runs: best.capped,
        redraws: records.iter().map(|r| r.redraws).sum::<u64>(),
    })
}

/// Persisted calibration result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub kind: EstimatorKind,
    pub n: usize,
    pub rho: f64,
    pub target_arl0: f64,
    pub style: LimitStyle,
    pub coefficient: f64,
    pub achieved_arl: f64,
    pub arl_se: f64,
    pub seed: u64,
    pub budget: u64,
    pub capped_runs: u64,
}

impl CalibrationRecord {
    pub fn new(cal: &Calibration, params: &ProcessParameters, seed: u64, budget: u64) -> Self {
        Self {
            kind: cal.config.kind,
            n: cal.config.n,
            rho: params.rho(),
            target_arl0: cal.config.target_arl0,
            style: cal.config.style,
            coefficient: cal.config.coefficient,
            achieved_arl: cal.achieved_arl,
            arl_se: cal.arl_se,
            seed,
            budget,
            capped_runs: cal.capped_runs,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::arl;

    fn params(rho: f64) -> ProcessParameters {
        ProcessParameters::new(5.0, 5.0, 1.0, 1.0, rho).unwrap()
    }

    fn three_sigma(kind: EstimatorKind, n: usize, l: f64, target: f64) -> ChartConfig {
        ChartConfig::new(kind, n, LimitStyle::ThreeSigmaScaled, l, target).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ChartConfig::new(EstimatorKind::T0, 5, LimitStyle::ThreeSigmaScaled, 0.0, 370.0).is_err());
        assert!(ChartConfig::new(EstimatorKind::T0, 1, LimitStyle::ThreeSigmaScaled, 3.0, 370.0).is_err());
        assert!(ChartConfig::new(EstimatorKind::T0, 5, LimitStyle::ProbabilityQuantile, 1.0, 370.0).is_err());
        assert!(ChartConfig::new(EstimatorKind::T0, 5, LimitStyle::ThreeSigmaScaled, 3.0, 1.0).is_err());
        assert!(ControlLimits::new(1.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn t0_three_sigma_closed_form() {
        let l = limits_three_sigma(&three_sigma(EstimatorKind::T0, 5, 3.0, 370.4), &params(0.5)).unwrap();
        let half = 3.0 / 5f64.sqrt();
        assert!((l.lcl() - (5.0 - half)).abs() < 1e-12);
        assert_eq!(l.cl(), 5.0);
        assert!((l.ucl() - (5.0 + half)).abs() < 1e-12);
        assert!((l.lcl() - 3.658).abs() < 5e-4 && (l.ucl() - 6.342).abs() < 5e-4);

        let tiny = limits_three_sigma(&three_sigma(EstimatorKind::T2, 5, 1e-9, 370.4), &params(0.5)).unwrap();
        assert!(tiny.lcl() < tiny.cl() && tiny.cl() < tiny.ucl());
    }

    #[test]
    fn regression_band_is_narrower() {
        let p = params(0.9);
        let w0 = limits_three_sigma(&three_sigma(EstimatorKind::T0, 5, 3.0, 370.4), &p).unwrap();
        let w1 = limits_three_sigma(&three_sigma(EstimatorKind::T1, 5, 3.0, 370.4), &p).unwrap();
        let ratio = (w1.ucl() - w1.lcl()) / (w0.ucl() - w0.lcl());
        assert!((ratio - (1.0f64 - 0.81).sqrt()).abs() < 1e-12);
        assert!((ratio - 0.436).abs() < 1e-3);
    }

    #[test]
    fn style_mismatch_is_rejected() {
        let p = params(0.5);
        let prob = ChartConfig::new(EstimatorKind::T0, 5, LimitStyle::ProbabilityQuantile, 0.01, 100.0).unwrap();
        assert!(limits_three_sigma(&prob, &p).is_err());
        let ts = three_sigma(EstimatorKind::T0, 5, 3.0, 370.0);
        assert!(limits_probability(&ts, &p, MIN_REFERENCE_SIZE, &RngStream::new(1)).is_err());
    }

    #[test]
    fn probability_limits_need_enough_draws() {
        let prob = ChartConfig::new(EstimatorKind::T0, 5, LimitStyle::ProbabilityQuantile, 0.01, 100.0).unwrap();
        let err = limits_probability(&prob, &params(0.5), 10_000, &RngStream::new(1)).unwrap_err();
        assert!(matches!(err, Error::Precision(ref m) if m.contains("100000")));
    }

    #[test]
    fn reference_quantile_and_cdf_are_inverse() {
        let r = ReferenceDistribution { sorted: vec![1.0, 2.0, 4.0, 8.0, 9.0] };
        assert_eq!(r.quantile(0.0), 1.0);
        assert_eq!(r.quantile(1.0), 9.0);
        assert_eq!(r.quantile(0.5), 4.0);
        assert_eq!(r.quantile(0.625), 6.0);
        for p in [0.0, 0.1, 0.3, 0.5, 0.625, 0.9, 1.0] {
            assert!((r.cdf(r.quantile(p)) - p).abs() < 1e-12, "{p}");
        }
        assert_eq!(r.cdf(0.5), 0.0);
        assert_eq!(r.cdf(10.0), 1.0);
    }

    #[test]
    fn monitor_basics() {
        let limits = ControlLimits::new(4.0, 5.0, 6.0).unwrap();
        let flat = vec![5.0; 10];
        let r = monitor(&flat, &limits, Some(3));
        assert!(r.signal_indices.is_empty());
        assert_eq!(r.first_signal_after, None);

        let mut one = flat.clone();
        one[6] = 6.5;
        assert_eq!(monitor(&one, &limits, None).signal_indices, vec![7]);

        let vals = [5.0, 3.9, 5.0, 6.1, 6.2, 5.0];
        let r = monitor(&vals, &limits, Some(2));
        assert_eq!(r.signal_indices, vec![2, 4, 5]);
        assert_eq!(r.first_signal_after, Some(4));
        // boundary values are in control
        assert!(monitor(&[4.0, 6.0], &limits, None).signal_indices.is_empty());
    }

    #[test]
    fn calibration_rejects_small_budget_or_tight_tolerance() {
        let cfg = three_sigma(EstimatorKind::T0, 5, 3.0, 370.0);
        let s = RngStream::new(1);
        assert!(matches!(calibrate(&cfg, &params(0.5), 1000, 0.03, &s), Err(Error::Precision(_))));
        assert!(matches!(calibrate(&cfg, &params(0.5), MIN_REFERENCE_SIZE, 0.001, &s), Err(Error::Precision(_))));
    }

    #[test]
    fn unreachable_targets_report_range_errors() {
        let s = RngStream::new(2);
        // L = 0.5 already gives ARL ~1.6
        let low = three_sigma(EstimatorKind::T0, 5, 3.0, 1.05);
        assert!(matches!(calibrate(&low, &params(0.5), MIN_REFERENCE_SIZE, 0.03, &s), Err(Error::CalibrationRange(_))));
        // L = 6 gives ARL ~5e8
        let high = three_sigma(EstimatorKind::T0, 5, 3.0, 1e12);
        assert!(matches!(calibrate(&high, &params(0.5), MIN_REFERENCE_SIZE, 0.03, &s), Err(Error::CalibrationRange(_))));
    }

    #[test]
    fn t0_calibrates_to_three_sigma() {
        let cfg = three_sigma(EstimatorKind::T0, 5, 1.0, 370.4);
        let cal = calibrate(&cfg, &params(0.5), 200_000, 0.01, &RngStream::new(3)).unwrap();
        assert!((cal.config.coefficient - 3.0).abs() < 0.02, "{}", cal.config.coefficient);
        assert!((cal.achieved_arl / 370.4 - 1.0).abs() <= 0.01);
        assert!(cal.arl_se > 0.0);
    }

    #[test]
    fn calibration_is_monotone_and_deterministic() {
        let p = params(0.6);
        let s = RngStream::new(4);
        let c200 = calibrate(&three_sigma(EstimatorKind::T3, 5, 1.0, 200.0), &p, MIN_REFERENCE_SIZE, 0.02, &s).unwrap();
        let c500 = calibrate(&three_sigma(EstimatorKind::T3, 5, 1.0, 500.0), &p, MIN_REFERENCE_SIZE, 0.02, &s).unwrap();
        assert!(c200.config.coefficient < c500.config.coefficient);
        let again = calibrate(&three_sigma(EstimatorKind::T3, 5, 1.0, 200.0), &p, MIN_REFERENCE_SIZE, 0.02, &s).unwrap();
        assert_eq!(c200, again);
    }

    #[test]
    fn probability_calibration_reproduces_limits() {
        let p = params(0.9);
        let cfg = ChartConfig::new(EstimatorKind::T1, 5, LimitStyle::ProbabilityQuantile, 0.01, 200.0).unwrap();
        let s = RngStream::new(5);
        let cal = calibrate(&cfg, &p, MIN_REFERENCE_SIZE, 0.03, &s).unwrap();
        // roughly the geometric identity alpha = 1 / ARL0
        assert!((cal.config.coefficient * 200.0 - 1.0).abs() < 0.1, "{}", cal.config.coefficient);
        let rebuilt = limits_probability(&cal.config, &p, MIN_REFERENCE_SIZE, &s.child(0)).unwrap();
        assert_eq!(rebuilt, cal.limits);
        let check = arl(&cal.config, &cal.limits, &p, ShiftSpec::IN_CONTROL, 100_000, 99).unwrap();
        assert!((check.arl / 200.0 - 1.0).abs() < 0.05, "{}", check.arl);
    }

    #[test]
    fn widening_limits_never_adds_signals() {
        let vals: Vec<f64> = (0..200).map(|i| 5.0 + ((i * 37 % 101) as f64 - 50.0) / 40.0).collect();
        let p = params(0.5);
        let mut prev: Option<Vec<usize>> = None;
        for l in [0.5, 1.0, 2.0, 3.0, 4.0] {
            let limits = limits_three_sigma(&three_sigma(EstimatorKind::T0, 5, l, 370.0), &p).unwrap();
            let sig = monitor(&vals, &limits, None).signal_indices;
            if let Some(prev) = &prev {
                assert!(sig.iter().all(|i| prev.contains(i)));
            }
            prev = Some(sig);
        }
    }
}
