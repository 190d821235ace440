//! Charting statistics `T0`–`T3` and their first-order mean squared errors.
//!
//! * `T0` is the subgroup mean of Y.
//! * `T1` is the regression estimator `y_bar + b (mu_x - x_bar)` with the
//!   sample slope `b = r_xy s_y / s_x`.
//! * `T2` is the ratio-product exponential estimator
//!   `y_bar (alpha e^u + (1 - alpha) e^-u)`, `u = (mu_x - x_bar) / (mu_x + x_bar)`.
//! * `T3` is the difference-cum-exponential estimator
//!   `(R + w1 (mu_x - x_bar) + w2 y_bar) e^u` built on a ratio-product term `R`.
//!
//! Weights are evaluated from known (Phase I) process parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::process::{ProcessParameters, Subgroup};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    T0,
    T1,
    T2,
    T3,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::T0, Self::T1, Self::T2, Self::T3];

    /// Whether the statistic depends on the sample dispersion, not just the means.
    pub fn needs_dispersion(self) -> bool {
        matches!(self, Self::T1)
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::T0 => "T0",
            Self::T1 => "T1",
            Self::T2 => "T2",
            Self::T3 => "T3",
        };
        f.write_str(s)
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "T0" => Ok(Self::T0),
            "T1" => Ok(Self::T1),
            "T2" => Ok(Self::T2),
            "T3" => Ok(Self::T3),
            other => Err(invalid(format!("unknown estimator kind {other:?}"))),
        }
    }
}

/// Sample moments of one subgroup. `r_xy` is `None` when either variable has
/// zero spread.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupStats {
    pub y_bar: f64,
    pub x_bar: f64,
    pub s_y: f64,
    pub s_x: f64,
    pub r_xy: Option<f64>,
}

impl SubgroupStats {
    /// Least-squares slope of y on x, `r_xy * s_y / s_x`. `None` when `s_x = 0`.
    pub fn slope(&self) -> Option<f64> {
        if self.s_x > 0.0 {
            Some(self.r_xy.unwrap_or(0.0) * self.s_y / self.s_x)
        } else {
            None
        }
    }
}

/// Arithmetic means, `n - 1` standard deviations and the Pearson correlation.
pub fn subgroup_stats(g: &Subgroup) -> SubgroupStats {
    let n = g.n() as f64;
    let y_bar = g.ys().sum::<f64>() / n;
    let x_bar = g.xs().sum::<f64>() / n;
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for &(y, x) in g.pairs() {
        let (dy, dx) = (y - y_bar, x - x_bar);
        syy += dy * dy;
        sxx += dx * dx;
        sxy += dy * dx;
    }
    let r_xy = if syy > 0.0 && sxx > 0.0 {
        Some((sxy / (syy * sxx).sqrt()).clamp(-1.0, 1.0))
    } else {
        None
    };
    SubgroupStats {
        y_bar,
        x_bar,
        s_y: (syy / (n - 1.0)).sqrt(),
        s_x: (sxx / (n - 1.0)).sqrt(),
        r_xy,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSource {
    /// Closed-form weight formulas, applied literally.
    PrintedFormula,
    /// Minimizer of the first-order MSE of `T3`, solved from its normal equations.
    #[default]
    QuadraticMinimizer,
}

impl FromStr for WeightSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "printed-formula" => Ok(Self::PrintedFormula),
            "quadratic-minimizer" => Ok(Self::QuadraticMinimizer),
            other => Err(invalid(format!("unknown weight source {other:?}"))),
        }
    }
}

/// Weights of the `T2` and `T3` statistics.
///
/// `alpha` is the `T2` mixing weight. `inner_alpha` is the mixing weight of the
/// ratio-product term embedded in `T3`: equal to `alpha` for printed weights and
/// `1/2` for the quadratic minimizer, where the regression adjustment is carried
/// entirely by `w1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorWeights {
    pub alpha: f64,
    pub inner_alpha: f64,
    pub w1: f64,
    pub w2: f64,
    pub source: WeightSource,
}

pub fn t0(stats: &SubgroupStats) -> f64 {
    stats.y_bar
}

pub fn t1(stats: &SubgroupStats, params: &ProcessParameters) -> Result<f64> {
    let b = stats
        .slope()
        .ok_or(Error::DegenerateSubgroup("zero spread in the auxiliary variable"))?;
    Ok(stats.y_bar + b * (params.mu_x() - stats.x_bar))
}

/// Exponent `u = (mu_x - x_bar) / (mu_x + x_bar)` shared by `T2` and `T3`.
#[inline]
fn exponent(x_bar: f64, mu_x: f64) -> Result<f64> {
    let denom = mu_x + x_bar;
    if denom > 0.0 {
        Ok((mu_x - x_bar) / denom)
    } else {
        Err(Error::Domain(denom))
    }
}

#[inline]
fn ratio_product(y_bar: f64, e_u: f64, alpha: f64) -> f64 {
    y_bar * (alpha * e_u + (1.0 - alpha) / e_u)
}

pub fn t2(stats: &SubgroupStats, params: &ProcessParameters, weights: &EstimatorWeights) -> Result<f64> {
    let e_u = exponent(stats.x_bar, params.mu_x())?.exp();
    Ok(ratio_product(stats.y_bar, e_u, weights.alpha))
}

pub fn t3(stats: &SubgroupStats, params: &ProcessParameters, weights: &EstimatorWeights) -> Result<f64> {
    let mu_x = params.mu_x();
    let e_u = exponent(stats.x_bar, mu_x)?.exp();
    let base = ratio_product(stats.y_bar, e_u, weights.inner_alpha);
    Ok((base + weights.w1 * (mu_x - stats.x_bar) + weights.w2 * stats.y_bar) * e_u)
}

fn lambda(n: usize) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("subgroup size must be at least 2, got {n}")));
    }
    Ok(1.0 / n as f64)
}

/// Optimum `T2` weight, `1/2 + rho C_y / C_x`.
pub fn optimal_alpha(params: &ProcessParameters) -> f64 {
    0.5 + params.rho() * params.cv_y() / params.cv_x()
}

pub fn weights_for(params: &ProcessParameters, n: usize, source: WeightSource) -> Result<EstimatorWeights> {
    let lam = lambda(n)?;
    let alpha = optimal_alpha(params);
    match source {
        WeightSource::PrintedFormula => {
            let (w1, w2) = printed_weights(params, lam)?;
            Ok(EstimatorWeights { alpha, inner_alpha: alpha, w1, w2, source })
        }
        WeightSource::QuadraticMinimizer => {
            let inner_alpha = 0.5;
            let (w1, w2) = FirstOrderT3::new(params, lam, inner_alpha).minimizer()?;
            Ok(EstimatorWeights { alpha, inner_alpha, w1, w2, source })
        }
    }
}

/// Closed-form optimum weight formulas, evaluated literally with `lambda = 1/n`.
fn printed_weights(params: &ProcessParameters, lam: f64) -> Result<(f64, f64)> {
    let (cy, cx, rho) = (params.cv_y(), params.cv_x(), params.rho());
    let (ybar, xbar) = (params.mu_y(), params.mu_x());
    let denom = 4.0 * xbar * cx * (-1.0 + lam * (-1.0 + rho * rho) * cy * cy);
    if cx <= 0.0 || denom == 0.0 || !denom.is_finite() {
        return Err(invalid("printed weight formula has a zero denominator"));
    }
    let w1 = ybar
        * (-4.0 * rho * cy
            + cx * (2.0 - lam * cx * cx + lam * rho * cy * cx + 2.0 * lam * (-1.0 + rho * rho)) * cy * cy)
        / denom;
    let w2 = lam * (cx * cx - 4.0 * (-1.0 + rho * rho) * cy * cy) / denom;
    Ok((w1, w2))
}

/// Affine form `c + a0 e0 + a1 e1` in the relative errors
/// `e0 = y_bar / Y - 1`, `e1 = x_bar / X - 1`.
#[derive(Debug, Clone, Copy)]
struct Linear {
    c: f64,
    a0: f64,
    a1: f64,
}

/// First-order expansion of `T3 - Y = f0 + w1 f1 + w2 f2`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FirstOrderT3 {
    v00: f64,
    v01: f64,
    v11: f64,
    f0: Linear,
    f1: Linear,
    f2: Linear,
}

impl FirstOrderT3 {
    pub(crate) fn new(params: &ProcessParameters, lam: f64, inner_alpha: f64) -> Self {
        let (cy, cx, rho) = (params.cv_y(), params.cv_x(), params.rho());
        let (ybar, xbar) = (params.mu_y(), params.mu_x());
        // ratio-product term ~ Y (1 + e0 - k e1), e^u ~ 1 - e1/2
        let k = inner_alpha - 0.5;
        Self {
            v00: lam * cy * cy,
            v01: lam * rho * cy * cx,
            v11: lam * cx * cx,
            f0: Linear { c: 0.0, a0: ybar, a1: -ybar * (k + 0.5) },
            f1: Linear { c: 0.0, a0: 0.0, a1: -xbar },
            f2: Linear { c: ybar, a0: ybar, a1: -0.5 * ybar },
        }
    }

    fn expect(&self, f: Linear, g: Linear) -> f64 {
        f.c * g.c + f.a0 * g.a0 * self.v00 + (f.a0 * g.a1 + f.a1 * g.a0) * self.v01 + f.a1 * g.a1 * self.v11
    }

    pub(crate) fn mse(&self, w1: f64, w2: f64) -> f64 {
        let d = Linear {
            c: self.f0.c + w1 * self.f1.c + w2 * self.f2.c,
            a0: self.f0.a0 + w1 * self.f1.a0 + w2 * self.f2.a0,
            a1: self.f0.a1 + w1 * self.f1.a1 + w2 * self.f2.a1,
        };
        self.expect(d, d)
    }

    pub(crate) fn minimizer(&self) -> Result<(f64, f64)> {
        let g11 = self.expect(self.f1, self.f1);
        let g12 = self.expect(self.f1, self.f2);
        let g22 = self.expect(self.f2, self.f2);
        let h1 = self.expect(self.f1, self.f0);
        let h2 = self.expect(self.f2, self.f0);
        let det = g11 * g22 - g12 * g12;
        let scale = g11 * g22;
        let rel = if scale > 0.0 { det / scale } else { 0.0 };
        if rel.is_nan() || rel <= 1e-12 {
            return Err(Error::NearSingular(rel));
        }
        let w1 = (-h1 * g22 + h2 * g12) / det;
        let w2 = (-h2 * g11 + h1 * g12) / det;
        Ok((w1, w2))
    }
}

/// First-order MSE of `T3` at arbitrary weights.
pub fn first_order_mse_t3(params: &ProcessParameters, n: usize, weights: &EstimatorWeights) -> Result<f64> {
    let lam = lambda(n)?;
    Ok(FirstOrderT3::new(params, lam, weights.inner_alpha).mse(weights.w1, weights.w2))
}

/// Theoretical MSE of each statistic with `lambda = 1/n`.
///
/// `T0` is the variance of the mean, `T1` and `T2` share the regression
/// variance `lambda Y^2 (1 - rho^2) C_y^2`, and `T3` uses the
/// closed-form minimum MSE.
pub fn theoretical_mse(kind: EstimatorKind, params: &ProcessParameters, n: usize) -> Result<f64> {
    let lam = lambda(n)?;
    let (cy, cx, rho) = (params.cv_y(), params.cv_x(), params.rho());
    let ybar2 = params.mu_y() * params.mu_y();
    Ok(match kind {
        EstimatorKind::T0 => lam * ybar2 * cy * cy,
        EstimatorKind::T1 | EstimatorKind::T2 => regression_mse(lam, ybar2, cy, rho),
        EstimatorKind::T3 => {
            let num = lam * ybar2 * (lam * cx.powi(4) - 8.0 * ((-1.0 + rho * rho) * (-2.0 + lam * cx * cx) * cy * cy));
            let den = 16.0 * (-1.0 + lam * (-1.0 + rho * rho) * cy * cy);
            num / den
        }
    })
}

fn regression_mse(lam: f64, ybar2: f64, cy: f64, rho: f64) -> f64 {
    lam * ybar2 * (1.0 - rho * rho) * cy * cy
}

fn gain_denominator(lam: f64, cy: f64, rho: f64) -> f64 {
    64.0 * (1.0 + lam * (1.0 - rho * rho) * cy * cy)
}

/// First reduction term of the decomposed `T3` minimum MSE.
pub fn mse_gain_a(params: &ProcessParameters, n: usize) -> Result<f64> {
    let lam = lambda(n)?;
    let (cy, cx, rho) = (params.cv_y(), params.cv_x(), params.rho());
    let ybar2 = params.mu_y() * params.mu_y();
    let inner = cx * cx + 8.0 * (1.0 - rho * rho) * cy * cy;
    Ok(lam * lam * ybar2 * inner * inner / gain_denominator(lam, cy, rho))
}

/// Second reduction term of the decomposed `T3` minimum MSE.
pub fn mse_gain_b(params: &ProcessParameters, n: usize) -> Result<f64> {
    let lam = lambda(n)?;
    let (cy, cx, rho) = (params.cv_y(), params.cv_x(), params.rho());
    let ybar2 = params.mu_y() * params.mu_y();
    let inner = 3.0 * cx * cx + 16.0 * (1.0 - rho * rho) * cy * cy;
    Ok(lam * lam * ybar2 * cx * cx * inner * inner / gain_denominator(lam, cy, rho))
}

/// `T3` minimum MSE written as the regression MSE minus both reduction terms.
pub fn decomposed_mse_t3(params: &ProcessParameters, n: usize) -> Result<f64> {
    let reg = theoretical_mse(EstimatorKind::T2, params, n)?;
    Ok(reg - mse_gain_a(params, n)? - mse_gain_b(params, n)?)
}

/// A charting statistic bound to its process parameters and weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimator {
    kind: EstimatorKind,
    params: ProcessParameters,
    weights: EstimatorWeights,
}

impl Estimator {
    pub fn new(kind: EstimatorKind, params: ProcessParameters, n: usize, source: WeightSource) -> Result<Self> {
        let weights = weights_for(&params, n, source)?;
        Ok(Self { kind, params, weights })
    }

    pub fn with_weights(kind: EstimatorKind, params: ProcessParameters, weights: EstimatorWeights) -> Self {
        Self { kind, params, weights }
    }

    pub fn kind(&self) -> EstimatorKind {
        self.kind
    }

    pub fn params(&self) -> &ProcessParameters {
        &self.params
    }

    pub fn weights(&self) -> &EstimatorWeights {
        &self.weights
    }

    pub fn evaluate(&self, stats: &SubgroupStats) -> Result<f64> {
        match self.kind {
            EstimatorKind::T0 => Ok(t0(stats)),
            EstimatorKind::T1 => t1(stats, &self.params),
            EstimatorKind::T2 => t2(stats, &self.params, &self.weights),
            EstimatorKind::T3 => t3(stats, &self.params, &self.weights),
        }
    }

    /// Evaluates a statistic that depends only on the subgroup means.
    ///
    /// Panics for `T1`, which needs the sample slope.
    #[inline]
    pub(crate) fn evaluate_means(&self, y_bar: f64, x_bar: f64) -> Result<f64> {
        let mu_x = self.params.mu_x();
        match self.kind {
            EstimatorKind::T0 => Ok(y_bar),
            EstimatorKind::T2 => {
                let e_u = exponent(x_bar, mu_x)?.exp();
                Ok(ratio_product(y_bar, e_u, self.weights.alpha))
            }
            EstimatorKind::T3 => {
                let e_u = exponent(x_bar, mu_x)?.exp();
                let base = ratio_product(y_bar, e_u, self.weights.inner_alpha);
                Ok((base + self.weights.w1 * (mu_x - x_bar) + self.weights.w2 * y_bar) * e_u)
            }
            EstimatorKind::T1 => unreachable!("T1 needs the sample slope"),
        }
    }
}
