//! Declarative experiment specification read from JSON.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use spc_aux_core::simulation::DEFAULT_CAP;
use spc_aux_core::{
    ChartConfig, EstimatorKind, LimitStyle, ProcessParameters, RngStream, Sampling, ShiftGrid, SimOptions,
    WeightSource,
};

use crate::CliError;

pub const GRID_TARGETS: [f64; 3] = [200.0, 371.0, 500.0];
pub const GRID_SIZES: [usize; 3] = [5, 10, 15];
pub const GRID_RHOS: [f64; 3] = [0.3, 0.6, 0.9];

#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn to_vec(&self) -> Vec<T> {
        match self {
            Self::One(v) => vec![v.clone()],
            Self::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum GridShorthand {
    /// ARL0 in {200, 371, 500} x n in {5, 10, 15} x rho in {0.3, 0.6, 0.9}.
    Paper,
}

fn default_kinds() -> Vec<EstimatorKind> {
    EstimatorKind::ALL.to_vec()
}

fn default_mean() -> f64 {
    5.0
}

fn default_sigma() -> f64 {
    1.0
}

fn default_style() -> LimitStyle {
    LimitStyle::ThreeSigmaScaled
}

fn default_reps() -> u64 {
    100_000
}

fn default_tolerance() -> f64 {
    0.02
}

fn default_cap() -> u64 {
    DEFAULT_CAP
}

/// Raw spec file contents. Scalars or lists are accepted for `n`, `rho` and
/// `target_arl0`; `"grid": "paper"` fills all three with the standard 27-cell grid.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default = "default_kinds")]
    pub kinds: Vec<EstimatorKind>,
    pub n: Option<OneOrMany<usize>>,
    pub rho: Option<OneOrMany<f64>>,
    #[serde(default = "default_mean")]
    pub mu_y: f64,
    #[serde(default = "default_mean")]
    pub mu_x: f64,
    #[serde(default = "default_sigma")]
    pub sigma_y: f64,
    #[serde(default = "default_sigma")]
    pub sigma_x: f64,
    pub target_arl0: Option<OneOrMany<f64>>,
    #[serde(default = "default_style")]
    pub style: LimitStyle,
    pub grid: Option<GridShorthand>,
    #[serde(default)]
    pub shifts: ShiftGrid,
    /// Replications per ARL estimate.
    #[serde(default = "default_reps")]
    pub reps: u64,
    /// Replications per calibration probe.
    #[serde(default = "default_reps")]
    pub budget: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    pub seed: u64,
    #[serde(default)]
    pub weights: WeightSource,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default = "default_cap")]
    pub cap: u64,
    pub benchmark: Option<EstimatorKind>,
    pub output: Option<PathBuf>,
}

/// One (n, rho, target) combination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub n: usize,
    pub rho: f64,
    pub target_arl0: f64,
    pub params: ProcessParameters,
}

impl Cell {
    /// File-name fragment, e.g. `n5_rho0.9_arl371`.
    pub fn tag(&self) -> String {
        format!("n{}_rho{}_arl{}", self.n, self.rho, self.target_arl0)
    }

    pub fn config(&self, kind: EstimatorKind, style: LimitStyle, weights: WeightSource) -> ChartConfig {
        let start = match style {
            LimitStyle::ThreeSigmaScaled => 3.0,
            LimitStyle::ProbabilityQuantile => 1.0 / self.target_arl0,
        };
        ChartConfig { kind, n: self.n, style, coefficient: start, target_arl0: self.target_arl0, weights }
    }

    /// Random stream for calibrating `kind` in this cell. It depends only on
    /// the seed and the cell, not on the order of cells in the spec.
    pub fn stream(&self, seed: u64, kind: EstimatorKind) -> RngStream {
        let k = EstimatorKind::ALL.iter().position(|&x| x == kind).unwrap_or(0) as u64;
        RngStream::new(seed).child(k).child(self.n as u64).child(self.rho.to_bits()).child(self.target_arl0.to_bits())
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} rho={} target={}", self.n, self.rho, self.target_arl0)
    }
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read spec {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let spec: Self = serde_json::from_str(text).map_err(|e| CliError::Validation(format!("spec: {e}")))?;
        spec.cells()?;
        Ok(spec)
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions { sampling: self.sampling, cap: self.cap }
    }

    /// Validated cells in spec order (n outermost, then rho, then target).
    pub fn cells(&self) -> Result<Vec<Cell>, CliError> {
        let v = |msg: String| CliError::Validation(msg);
        if self.kinds.is_empty() {
            return Err(v("kinds must not be empty".into()));
        }
        if self.kinds.iter().collect::<BTreeSet<_>>().len() != self.kinds.len() {
            return Err(v("kinds contains duplicates".into()));
        }
        let (ns, rhos, targets) = match self.grid {
            Some(GridShorthand::Paper) => {
                if self.n.is_some() || self.rho.is_some() || self.target_arl0.is_some() {
                    return Err(v("\"grid\": \"paper\" cannot be combined with n, rho or target_arl0".into()));
                }
                (GRID_SIZES.to_vec(), GRID_RHOS.to_vec(), GRID_TARGETS.to_vec())
            }
            None => {
                let need = |name: &str| v(format!("{name} is required unless \"grid\": \"paper\" is given"));
                (
                    self.n.as_ref().ok_or_else(|| need("n"))?.to_vec(),
                    self.rho.as_ref().ok_or_else(|| need("rho"))?.to_vec(),
                    self.target_arl0.as_ref().ok_or_else(|| need("target_arl0"))?.to_vec(),
                )
            }
        };
        if ns.is_empty() || rhos.is_empty() || targets.is_empty() {
            return Err(v("n, rho and target_arl0 must not be empty lists".into()));
        }
        if self.reps == 0 || self.budget == 0 || self.cap == 0 {
            return Err(v("reps, budget and cap must be positive".into()));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(v(format!("tolerance must lie in (0, 1), got {}", self.tolerance)));
        }
        if let Some(b) = self.benchmark {
            if !self.kinds.contains(&b) {
                return Err(v(format!("benchmark {b} is not among the requested kinds")));
            }
        }
        let mut cells = Vec::new();
        for &n in &ns {
            for &rho in &rhos {
                let params = ProcessParameters::new(self.mu_y, self.mu_x, self.sigma_y, self.sigma_x, rho)
                    .map_err(|e| v(e.to_string()))?;
                for &target_arl0 in &targets {
                    let cell = Cell { n, rho, target_arl0, params };
                    for &kind in &self.kinds {
                        cell.config(kind, self.style, self.weights).validate().map_err(|e| v(format!("{cell}: {e}")))?;
                    }
                    cells.push(cell);
                }
            }
        }
        Ok(cells)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_has_27_cells() {
        let spec = ExperimentSpec::from_json(r#"{"grid": "paper", "seed": 1}"#).unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 27);
        assert_eq!(spec.kinds.len(), 4);
        assert_eq!(cells[0].tag(), "n5_rho0.3_arl200");
    }

    #[test]
    fn scalars_and_lists() {
        let spec = ExperimentSpec::from_json(r#"{"n": [5, 10], "rho": 0.9, "target_arl0": 371, "seed": 7}"#).unwrap();
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].n, 10);
        assert_eq!(spec.shifts, ShiftGrid::default());
    }

    #[test]
    fn validation_errors() {
        for bad in [
            r#"{"kinds": [], "n": 5, "rho": 0.9, "target_arl0": 371, "seed": 1}"#,
            r#"{"kinds": ["T0", "T0"], "n": 5, "rho": 0.9, "target_arl0": 371, "seed": 1}"#,
            r#"{"n": 1, "rho": 0.9, "target_arl0": 371, "seed": 1}"#,
            r#"{"n": 5, "rho": 1.0, "target_arl0": 371, "seed": 1}"#,
            r#"{"n": 5, "rho": 0.9, "target_arl0": 1, "seed": 1}"#,
            r#"{"n": 5, "rho": 0.9, "seed": 1}"#,
            r#"{"grid": "paper", "n": 5, "seed": 1}"#,
            r#"{"grid": "paper"}"#,
            r#"{"grid": "paper", "seed": 1, "colour": "red"}"#,
            r#"{"grid": "paper", "seed": 1, "shifts": [1, 0]}"#,
            r#"{"grid": "paper", "seed": 1, "kinds": ["T0"], "benchmark": "T3"}"#,
        ] {
            assert!(matches!(ExperimentSpec::from_json(bad), Err(CliError::Validation(_))), "{bad}");
        }
    }

    #[test]
    fn cell_streams_depend_on_cell_not_order() {
        let spec = ExperimentSpec::from_json(r#"{"grid": "paper", "seed": 3}"#).unwrap();
        let cells = spec.cells().unwrap();
        let mut a = cells[4].stream(3, EstimatorKind::T1);
        let mut b = cells[4].stream(3, EstimatorKind::T1);
        let mut c = cells[5].stream(3, EstimatorKind::T1);
        let mut d = cells[4].stream(3, EstimatorKind::T2);
        let x = a.standard_normal();
        assert_eq!(x, b.standard_normal());
        assert_ne!(x, c.standard_normal());
        assert_ne!(x, d.standard_normal());
    }
}
