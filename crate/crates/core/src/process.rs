//! In-control and shifted bivariate normal process, rational subgroups and
//! reproducible random streams.
//!
//! Observations are generated through the conditional decomposition
//!
//! ```text
//!   x = mu_x + sigma_x * z1
//!   y = mu_y + delta * sigma_y + sigma_y * (rho * z1 + sqrt(1 - rho^2) * z2)
//! ```
//!
//! so a shift moves only the study-variable mean, by `delta` standard deviations
//! per observation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::estimators::SubgroupStats;

/// Parameters of the in-control bivariate normal process `(Y, X)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParameters", into = "RawParameters")]
pub struct ProcessParameters {
    mu_y: f64,
    mu_x: f64,
    sigma_y: f64,
    sigma_x: f64,
    rho: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParameters {
    mu_y: f64,
    mu_x: f64,
    sigma_y: f64,
    sigma_x: f64,
    rho_xy: f64,
}

impl TryFrom<RawParameters> for ProcessParameters {
    type Error = crate::Error;

    fn try_from(raw: RawParameters) -> Result<Self> {
        ProcessParameters::new(raw.mu_y, raw.mu_x, raw.sigma_y, raw.sigma_x, raw.rho_xy)
    }
}

impl From<ProcessParameters> for RawParameters {
    fn from(p: ProcessParameters) -> Self {
        RawParameters {
            mu_y: p.mu_y,
            mu_x: p.mu_x,
            sigma_y: p.sigma_y,
            sigma_x: p.sigma_x,
            rho_xy: p.rho,
        }
    }
}

impl ProcessParameters {
    /// Both means must be positive: the ratio-type estimators divide by them.
    pub fn new(mu_y: f64, mu_x: f64, sigma_y: f64, sigma_x: f64, rho_xy: f64) -> Result<Self> {
        let all = [mu_y, mu_x, sigma_y, sigma_x, rho_xy];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(invalid("process parameters must be finite"));
        }
        if sigma_y <= 0.0 || sigma_x <= 0.0 {
            return Err(invalid(format!(
                "standard deviations must be positive (sigma_y={sigma_y}, sigma_x={sigma_x})"
            )));
        }
        if !(rho_xy > -1.0 && rho_xy < 1.0) {
            return Err(invalid(format!("correlation must lie in (-1, 1), got {rho_xy}")));
        }
        if mu_y <= 0.0 || mu_x <= 0.0 {
            return Err(invalid(format!(
                "means must be positive (mu_y={mu_y}, mu_x={mu_x})"
            )));
        }
        Ok(Self { mu_y, mu_x, sigma_y, sigma_x, rho: rho_xy })
    }

    pub fn mu_y(&self) -> f64 {
        self.mu_y
    }

    pub fn mu_x(&self) -> f64 {
        self.mu_x
    }

    pub fn sigma_y(&self) -> f64 {
        self.sigma_y
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Coefficient of variation of the study variable, `sigma_y / mu_y`.
    pub fn cv_y(&self) -> f64 {
        self.sigma_y / self.mu_y
    }

    /// Coefficient of variation of the auxiliary variable, `sigma_x / mu_x`.
    pub fn cv_x(&self) -> f64 {
        self.sigma_x / self.mu_x
    }

    /// Mean of Y under the given shift.
    pub fn shifted_mean_y(&self, shift: ShiftSpec) -> f64 {
        self.mu_y + shift.delta() * self.sigma_y
    }
}

/// Sustained shift of the study-variable mean, in multiples of `sigma_y`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ShiftSpec(f64);

impl ShiftSpec {
    pub const IN_CONTROL: ShiftSpec = ShiftSpec(0.0);

    pub fn new(delta: f64) -> Result<Self> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(invalid(format!("shift must be finite and non-negative, got {delta}")));
        }
        Ok(Self(delta))
    }

    pub fn delta(&self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ShiftSpec {
    type Error = crate::Error;

    fn try_from(delta: f64) -> Result<Self> {
        ShiftSpec::new(delta)
    }
}

impl From<ShiftSpec> for f64 {
    fn from(s: ShiftSpec) -> f64 {
        s.0
    }
}

/// One rational subgroup of paired `(y, x)` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Subgroup {
    pairs: Vec<(f64, f64)>,
}

impl Subgroup {
    pub fn new(pairs: Vec<(f64, f64)>) -> Result<Self> {
        if pairs.len() < 2 {
            return Err(invalid(format!(
                "a subgroup needs at least 2 observations, got {}",
                pairs.len()
            )));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(f64, f64)] {
        &self.pairs
    }

    pub fn n(&self) -> usize {
        self.pairs.len()
    }

    pub fn ys(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.0)
    }

    pub fn xs(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(|p| p.1)
    }
}

/// Seedable, splittable pseudo-random stream.
///
/// Backed by ChaCha8. Children of one parent share a derived key and use
/// distinct 64-bit stream ids, so sibling sequences never overlap. A child is
/// derived from the parent's seed material, not its position, so drawing from
/// the parent does not change its children.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u8; 32],
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"spc-aux/root");
        h.update(seed.to_le_bytes());
        Self::from_key(digest_key(h), 0)
    }

    fn from_key(key: [u8; 32], stream: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream);
        Self { key, stream, rng }
    }

    /// Independent child stream `index`.
    pub fn child(&self, index: u64) -> RngStream {
        let mut h = Sha256::new();
        h.update(b"spc-aux/child");
        h.update(self.key);
        h.update(self.stream.to_le_bytes());
        Self::from_key(digest_key(h), index)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

fn digest_key(h: Sha256) -> [u8; 32] {
    let mut key = [0u8; 32];
    key.copy_from_slice(&h.finalize());
    key
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws `n` iid pairs from the (possibly shifted) process.
pub fn sample_subgroup(
    params: &ProcessParameters,
    n: usize,
    shift: ShiftSpec,
    stream: &mut RngStream,
) -> Result<Subgroup> {
    if n < 2 {
        return Err(invalid(format!("subgroup size must be at least 2, got {n}")));
    }
    let mean_y = params.shifted_mean_y(shift);
    let resid = (1.0 - params.rho * params.rho).sqrt();
    let pairs = (0..n)
        .map(|_| {
            let z1 = stream.standard_normal();
            let z2 = stream.standard_normal();
            let x = params.mu_x + params.sigma_x * z1;
            let y = mean_y + params.sigma_y * (params.rho * z1 + resid * z2);
            (y, x)
        })
        .collect();
    Ok(Subgroup { pairs })
}

/// Exact sampler of subgroup summary statistics.
///
/// Under bivariate normality the sample means are independent of the sample
/// covariance matrix, which is Wishart with `n - 1` degrees of freedom. The
/// means are drawn directly and the covariance through the Bartlett
/// decomposition, which costs a constant number of variates per subgroup
/// instead of `2n`.
#[derive(Debug, Clone)]
pub struct SummarySampler {
    params: ProcessParameters,
    n: usize,
    resid: f64,
    sqrt_n: f64,
    chi_first: ChiSquared<f64>,
    chi_second: Option<ChiSquared<f64>>,
}

impl SummarySampler {
    pub fn new(params: ProcessParameters, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(invalid(format!("subgroup size must be at least 2, got {n}")));
        }
        let chi = |df: usize| ChiSquared::new(df as f64).map_err(|e| invalid(e.to_string()));
        Ok(Self {
            params,
            n,
            resid: (1.0 - params.rho * params.rho).sqrt(),
            sqrt_n: (n as f64).sqrt(),
            chi_first: chi(n - 1)?,
            chi_second: if n > 2 { Some(chi(n - 2)?) } else { None },
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Draws `(y_bar, x_bar)`.
    #[inline]
    pub fn means(&self, shift: ShiftSpec, stream: &mut RngStream) -> (f64, f64) {
        let p = &self.params;
        let z1 = stream.standard_normal();
        let z2 = stream.standard_normal();
        let x_bar = p.mu_x + p.sigma_x * z1 / self.sqrt_n;
        let y_bar = p.shifted_mean_y(shift) + p.sigma_y * (p.rho * z1 + self.resid * z2) / self.sqrt_n;
        (y_bar, x_bar)
    }

    /// Draws the full summary `(y_bar, x_bar, s_y, s_x, r_xy)`; the means
    /// consume the stream exactly as [`SummarySampler::means`] does.
    pub fn stats(&self, shift: ShiftSpec, stream: &mut RngStream) -> SubgroupStats {
        let (y_bar, x_bar) = self.means(shift, stream);
        let p = &self.params;
        let a11 = self.chi_first.sample(stream).sqrt();
        let a21 = stream.standard_normal();
        let a22 = self.chi_second.map_or(0.0, |c| c.sample(stream).sqrt());
        let dof = (self.n - 1) as f64;

        let lx = p.sigma_x * a11;
        let ly1 = p.sigma_y * (p.rho * a11 + self.resid * a21);
        let ly2 = p.sigma_y * self.resid * a22;
        let w_xx = lx * lx;
        let w_yy = ly1 * ly1 + ly2 * ly2;
        let w_xy = lx * ly1;

        let r_xy = if w_xx > 0.0 && w_yy > 0.0 {
            Some((w_xy / (w_xx * w_yy).sqrt()).clamp(-1.0, 1.0))
        } else {
            None
        };
        SubgroupStats {
            y_bar,
            x_bar,
            s_y: (w_yy / dof).sqrt(),
            s_x: (w_xx / dof).sqrt(),
            r_xy,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(rho: f64) -> ProcessParameters {
        ProcessParameters::new(5.0, 5.0, 1.0, 1.0, rho).unwrap()
    }

    #[test]
    fn parameter_validation() {
        assert!(ProcessParameters::new(5.0, 5.0, 0.0, 1.0, 0.5).is_err());
        assert!(ProcessParameters::new(5.0, 5.0, 1.0, -1.0, 0.5).is_err());
        assert!(ProcessParameters::new(5.0, 5.0, 1.0, 1.0, 1.0).is_err());
        assert!(ProcessParameters::new(5.0, 5.0, 1.0, 1.0, -1.0).is_err());
        assert!(ProcessParameters::new(0.0, 5.0, 1.0, 1.0, 0.5).is_err());
        assert!(ProcessParameters::new(5.0, -2.0, 1.0, 1.0, 0.5).is_err());
        assert!(ProcessParameters::new(f64::NAN, 5.0, 1.0, 1.0, 0.5).is_err());
        let p = ProcessParameters::new(5.0, 4.0, 1.0, 0.8, 0.3).unwrap();
        assert_eq!(p.cv_y(), 0.2);
        assert_eq!(p.cv_x(), 0.2);
    }

    #[test]
    fn parameters_json_uses_rho_xy() {
        let p = params(0.6);
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"rho_xy\":0.6"));
        let back: ProcessParameters = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let bad = s.replace("0.6", "1.5");
        assert!(serde_json::from_str::<ProcessParameters>(&bad).is_err());
    }

    #[test]
    fn shift_validation() {
        assert!(ShiftSpec::new(-0.1).is_err());
        assert!(ShiftSpec::new(f64::INFINITY).is_err());
        assert_eq!(ShiftSpec::new(0.0).unwrap(), ShiftSpec::IN_CONTROL);
    }

    #[test]
    fn subgroup_requires_two_points() {
        assert!(Subgroup::new(vec![(1.0, 1.0)]).is_err());
        let mut s = RngStream::new(1);
        assert!(sample_subgroup(&params(0.5), 1, ShiftSpec::IN_CONTROL, &mut s).is_err());
        assert!(SummarySampler::new(params(0.5), 1).is_err());
    }

    #[test]
    fn same_seed_same_subgroups() {
        let p = params(0.9);
        let draw = |seed| {
            let mut s = RngStream::new(seed);
            (0..20)
                .map(|_| sample_subgroup(&p, 5, ShiftSpec::IN_CONTROL, &mut s).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        assert_ne!(draw(7), draw(8));
    }

    #[test]
    fn children_are_distinct_and_position_independent() {
        let root = RngStream::new(3);
        let mut consumed = root.clone();
        for _ in 0..100 {
            consumed.next_u64();
        }
        let mut a = root.child(4);
        let mut b = consumed.child(4);
        assert_eq!(a.next_u64(), b.next_u64());

        let firsts: Vec<u64> = (0..64).map(|i| root.child(i).next_u64()).collect();
        let mut dedup = firsts.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), firsts.len());
        // grandchildren differ from children with the same index
        assert_ne!(root.child(1).child(1).next_u64(), root.child(1).next_u64());
    }

    #[test]
    fn table_one_like_spread() {
        let p = params(0.9);
        let mut s = RngStream::new(11);
        for _ in 0..50 {
            let g = sample_subgroup(&p, 5, ShiftSpec::IN_CONTROL, &mut s).unwrap();
            let y_bar = g.ys().sum::<f64>() / 5.0;
            assert!((3.0..7.0).contains(&y_bar), "{y_bar}");
        }
    }

    fn pair_moments(rho: f64, delta: f64, m: usize, seed: u64) -> [f64; 5] {
        let p = params(rho);
        let mut s = RngStream::new(seed);
        let shift = ShiftSpec::new(delta).unwrap();
        let mut ys = Vec::with_capacity(m);
        let mut xs = Vec::with_capacity(m);
        while ys.len() < m {
            let g = sample_subgroup(&p, 10, shift, &mut s).unwrap();
            ys.extend(g.ys());
            xs.extend(g.xs());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (my, mx) = (mean(&ys), mean(&xs));
        let sd = |v: &[f64], m: f64| (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt();
        let (sy, sx) = (sd(&ys, my), sd(&xs, mx));
        let cov = ys.iter().zip(&xs).map(|(y, x)| (y - my) * (x - mx)).sum::<f64>() / (m - 1) as f64;
        [my, mx, sy, sx, cov / (sy * sx)]
    }

    #[test]
    fn independence_case_has_zero_correlation() {
        let [.., r] = pair_moments(0.0, 0.0, 100_000, 21);
        assert!(r.abs() < 0.01, "{r}");
    }

    #[test]
    fn shifted_mean_moves_by_sigma_y() {
        let [my, ..] = pair_moments(0.6, 1.0, 100_000, 22);
        assert!((my - 6.0).abs() < 0.01, "{my}");
    }

    #[test]
    fn moments_within_four_standard_errors() {
        let m = 200_000;
        let rho = 0.6;
        let [my, mx, sy, sx, r] = pair_moments(rho, 0.5, m, 23);
        let mf = m as f64;
        let se_mean = 1.0 / mf.sqrt();
        let se_sd = 1.0 / (2.0 * mf).sqrt();
        let se_r = (1.0 - rho * rho) / mf.sqrt();
        assert!((my - 5.5).abs() < 4.0 * se_mean, "{my}");
        assert!((mx - 5.0).abs() < 4.0 * se_mean, "{mx}");
        assert!((sy - 1.0).abs() < 4.0 * se_sd, "{sy}");
        assert!((sx - 1.0).abs() < 4.0 * se_sd, "{sx}");
        assert!((r - rho).abs() < 4.0 * se_r, "{r}");
    }

    #[test]
    fn marginals_look_normal() {
        let p = params(0.9);
        let mut s = RngStream::new(31);
        let m = 1_000_000;
        let mut ys = Vec::with_capacity(m);
        let mut xs = Vec::with_capacity(m);
        while ys.len() < m {
            let g = sample_subgroup(&p, 10, ShiftSpec::IN_CONTROL, &mut s).unwrap();
            ys.extend(g.ys());
            xs.extend(g.xs());
        }
        for v in [&ys, &xs] {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let m2 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
            let m3 = v.iter().map(|a| (a - mean).powi(3)).sum::<f64>() / n;
            let m4 = v.iter().map(|a| (a - mean).powi(4)).sum::<f64>() / n;
            let skew = m3 / m2.powf(1.5);
            let kurt = m4 / (m2 * m2) - 3.0;
            assert!(skew.abs() < 0.05, "skew {skew}");
            assert!(kurt.abs() < 0.05, "kurt {kurt}");
        }
    }

    #[test]
    fn summary_means_match_pair_means_in_distribution() {
        let p = params(0.9);
        let sampler = SummarySampler::new(p, 5).unwrap();
        let mut s = RngStream::new(41);
        let m = 200_000;
        let shift = ShiftSpec::new(1.0).unwrap();
        let (mut sum_y, mut sum_x, mut sum_yy, mut sum_xy) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..m {
            let (y, x) = sampler.means(shift, &mut s);
            sum_y += y;
            sum_x += x;
            sum_yy += (y - 6.0) * (y - 6.0);
            sum_xy += (y - 6.0) * (x - 5.0);
        }
        let mf = m as f64;
        let se = (0.2f64 / mf).sqrt();
        assert!((sum_y / mf - 6.0).abs() < 4.0 * se);
        assert!((sum_x / mf - 5.0).abs() < 4.0 * se);
        assert!((sum_yy / mf - 0.2).abs() < 0.005);
        assert!((sum_xy / mf - 0.18).abs() < 0.005);
    }

    #[test]
    fn summary_n2_is_collinear() {
        let sampler = SummarySampler::new(params(0.3), 2).unwrap();
        let mut s = RngStream::new(5);
        for _ in 0..100 {
            let st = sampler.stats(ShiftSpec::IN_CONTROL, &mut s);
            let r = st.r_xy.unwrap();
            assert!((r.abs() - 1.0).abs() < 1e-9, "{r}");
        }
    }
}
