use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use spc_aux_core::estimators::{decomposed_mse_t3, first_order_mse_t3};
use spc_aux_core::{
    arl_curve_with, calibrate_with, eql_minimal, limits_probability_with, limits_three_sigma, performance_summary,
    sample_subgroup, subgroup_stats, theoretical_mse, weights_for, ArlProfile, CalibrationRecord, ChartConfig,
    ControlLimits, Estimator, EstimatorKind, EstimatorWeights, LimitStyle, PerformanceSummary, ProcessParameters,
    RngStream, ShiftSpec, SignalReport, SummarySampler, WeightSource,
};

use crate::data::MonitorInput;
use crate::spec::{Cell, ExperimentSpec};
use crate::CliError;

pub const COMBINED_CSV_HEADER: &str = "kind,delta,arl,sdrl,se";

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    fs::write(path, contents).map_err(CliError::io(path))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// Calibrates every (kind, cell) of the spec. Records are written as a JSON
/// array to `output` (falling back to the spec's `output`) when one is given.
pub fn cmd_calibrate(spec: &ExperimentSpec, output: Option<&Path>) -> Result<Vec<CalibrationRecord>, CliError> {
    let cells = spec.cells()?;
    let opts = spec.sim_options();
    let mut records = Vec::with_capacity(cells.len() * spec.kinds.len());
    for cell in &cells {
        for &kind in &spec.kinds {
            let config = cell.config(kind, spec.style, spec.weights);
            let cal = calibrate_with(&config, &cell.params, spec.budget, spec.tolerance, &cell.stream(spec.seed, kind), &opts)
                .map_err(CliError::core(format!("calibrating {kind} at {cell}")))?;
            log::info!("{kind} {cell}: coefficient {} ARL {:.2}", cal.config.coefficient, cal.achieved_arl);
            records.push(CalibrationRecord::new(&cal, &cell.params, spec.seed, spec.budget));
        }
    }
    if let Some(path) = output.or(spec.output.as_deref()) {
        write_file(path, &to_json(&records))?;
    }
    Ok(records)
}

fn load_calibration(path: &Path) -> Result<Vec<CalibrationRecord>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Calibration(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Calibration(format!("{}: {e}", path.display())))
}

fn find_record<'a>(
    records: &'a [CalibrationRecord],
    kind: EstimatorKind,
    cell: &Cell,
    style: LimitStyle,
) -> Result<&'a CalibrationRecord, CliError> {
    records
        .iter()
        .find(|r| {
            r.kind == kind
                && r.n == cell.n
                && r.rho == cell.rho
                && r.target_arl0 == cell.target_arl0
                && r.style == style
        })
        .ok_or_else(|| CliError::Calibration(format!("no calibration record for {kind} {cell} style={style}")))
}

/// Limits of a calibrated chart, rebuilt from its record.
pub fn calibrated_chart(
    spec: &ExperimentSpec,
    cell: &Cell,
    record: &CalibrationRecord,
) -> Result<(ChartConfig, ControlLimits), CliError> {
    let config = ChartConfig { coefficient: record.coefficient, ..cell.config(record.kind, record.style, spec.weights) };
    let context = format!("limits for {} at {cell}", record.kind);
    let limits = match record.style {
        LimitStyle::ThreeSigmaScaled => limits_three_sigma(&config, &cell.params),
        LimitStyle::ProbabilityQuantile => {
            let stream = cell.stream(record.seed, record.kind).child(0);
            limits_probability_with(&config, &cell.params, record.budget, &stream, &spec.sim_options())
        }
    }
    .map_err(CliError::core(context))?;
    Ok((config, limits))
}

/// ARL profiles of every chart in one cell, plus EQL / RARL / PCI when the
/// shift grid has at least three positive shifts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCurves {
    pub n: usize,
    pub rho: f64,
    pub target_arl0: f64,
    pub limits: BTreeMap<EstimatorKind, ControlLimits>,
    pub profiles: BTreeMap<EstimatorKind, ArlProfile>,
    pub performance: Option<BTreeMap<EstimatorKind, PerformanceSummary>>,
}

impl CellCurves {
    pub fn combined_csv(&self) -> String {
        let mut out = format!("{COMBINED_CSV_HEADER}\n");
        for (kind, profile) in &self.profiles {
            for e in &profile.entries {
                writeln!(out, "{kind},{},{},{},{}", e.delta, e.arl, e.sdrl, e.se).unwrap();
            }
        }
        out
    }
}

/// Simulates ARL curves for every (kind, cell) using the calibrated
/// coefficients. With `out_dir`, writes `<kind>_<cell>.csv`,
/// `curves_<cell>.csv` and `summary_<cell>.json` per cell.
pub fn cmd_arl_curve(
    spec: &ExperimentSpec,
    calibration: &Path,
    out_dir: Option<&Path>,
) -> Result<Vec<CellCurves>, CliError> {
    let cells = spec.cells()?;
    let records = load_calibration(calibration)?;
    // every record must exist before any simulation starts
    for cell in &cells {
        for &kind in &spec.kinds {
            find_record(&records, kind, cell, spec.style)?;
        }
    }
    let opts = spec.sim_options();
    let positive = spec.shifts.deltas().iter().filter(|&&d| d > 0.0).count();
    let out_dir = out_dir.or(spec.output.as_deref());
    let mut all = Vec::with_capacity(cells.len());
    for cell in &cells {
        let mut limits = BTreeMap::new();
        let mut profiles = BTreeMap::new();
        for &kind in &spec.kinds {
            let record = find_record(&records, kind, cell, spec.style)?;
            let (config, lim) = calibrated_chart(spec, cell, record)?;
            let profile = arl_curve_with(&config, &lim, &cell.params, &spec.shifts, spec.reps, spec.seed, &opts)
                .map_err(CliError::core(format!("ARL curve for {kind} at {cell}")))?;
            log::info!("{kind} {cell}: ARL0 {:.2}", profile.entries[0].arl);
            limits.insert(kind, lim);
            profiles.insert(kind, profile);
        }
        let performance = if positive >= 3 {
            let benchmark = match spec.benchmark {
                Some(b) => b,
                None => eql_minimal(&profiles).map_err(CliError::core(format!("EQL at {cell}")))?,
            };
            Some(performance_summary(&profiles, benchmark).map_err(CliError::core(format!("summary at {cell}")))?)
        } else {
            None
        };
        let curves = CellCurves { n: cell.n, rho: cell.rho, target_arl0: cell.target_arl0, limits, profiles, performance };
        if let Some(dir) = out_dir {
            let tag = cell.tag();
            for (kind, profile) in &curves.profiles {
                write_file(&dir.join(format!("{kind}_{tag}.csv")), &profile.to_csv())?;
            }
            write_file(&dir.join(format!("curves_{tag}.csv")), &curves.combined_csv())?;
            write_file(&dir.join(format!("summary_{tag}.json")), &to_json(&curves))?;
        }
        all.push(curves);
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOptions {
    /// Required for raw `(y, x)` input.
    pub kind: Option<EstimatorKind>,
    /// Process parameters for `T1`..`T3` on raw input.
    pub params: Option<ProcessParameters>,
    pub weights: WeightSource,
    pub prefix: usize,
    pub coefficient: f64,
    /// Defaults to the training prefix length.
    pub changepoint: Option<usize>,
}

impl Default for MonitorOptions {
    fn default() -> Self {
        Self { kind: None, params: None, weights: WeightSource::default(), prefix: 30, coefficient: 3.0, changepoint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonitorReport {
    pub kind: Option<EstimatorKind>,
    pub subgroups: usize,
    pub prefix: usize,
    pub coefficient: f64,
    pub lcl: f64,
    pub cl: f64,
    pub ucl: f64,
    pub changepoint: usize,
    pub signal_indices: Vec<usize>,
    pub first_signal_after: Option<usize>,
    pub signals_after_changepoint: usize,
    pub warning: Option<String>,
    #[serde(skip)]
    pub labels: Vec<String>,
    #[serde(skip)]
    pub statistics: Vec<f64>,
}

impl MonitorReport {
    /// `subgroup,statistic,lcl,ucl,signal` rows.
    pub fn annotated_csv(&self) -> String {
        let mut out = String::from("subgroup,statistic,lcl,ucl,signal\n");
        let mut flags = vec![false; self.statistics.len()];
        for &i in &self.signal_indices {
            flags[i - 1] = true;
        }
        for ((label, v), flag) in self.labels.iter().zip(&self.statistics).zip(flags) {
            writeln!(out, "{label},{v},{},{},{}", self.lcl, self.ucl, u8::from(flag)).unwrap();
        }
        out
    }
}

fn statistics(input: &MonitorInput, opts: &MonitorOptions) -> Result<Vec<f64>, CliError> {
    let groups = match input {
        MonitorInput::Statistics { values, .. } => return Ok(values.clone()),
        MonitorInput::Pairs { groups, .. } => groups,
    };
    let kind = opts.kind.ok_or_else(|| CliError::Validation("raw (y, x) input needs a chart kind".into()))?;
    if kind == EstimatorKind::T0 && opts.params.is_none() {
        return Ok(groups.iter().map(|g| subgroup_stats(g).y_bar).collect());
    }
    let params = opts
        .params
        .ok_or_else(|| CliError::Validation(format!("{kind} on raw input needs process parameters (--spec)")))?;
    let n = groups[0].n();
    let est = Estimator::new(kind, params, n, opts.weights).map_err(CliError::core(format!("{kind} with n={n}")))?;
    groups
        .iter()
        .enumerate()
        .map(|(i, g)| est.evaluate(&subgroup_stats(g)).map_err(CliError::core(format!("subgroup {}", i + 1))))
        .collect()
}

/// Phase-II monitoring with limits estimated from a training prefix as
/// `mean -/+ L * sd` (sample sd, divisor `m - 1`). With `out_dir`, writes
/// `report.json` and `annotated.csv`.
pub fn cmd_monitor(input: &MonitorInput, opts: &MonitorOptions, out_dir: Option<&Path>) -> Result<MonitorReport, CliError> {
    if opts.prefix < 10 {
        return Err(CliError::Prefix(opts.prefix));
    }
    if !(opts.coefficient > 0.0 && opts.coefficient.is_finite()) {
        return Err(CliError::Validation(format!("coefficient must be positive, got {}", opts.coefficient)));
    }
    let values = statistics(input, opts)?;
    if opts.prefix > values.len() {
        return Err(CliError::Validation(format!(
            "training prefix {} is longer than the {} subgroups in the input",
            opts.prefix,
            values.len()
        )));
    }
    let train = &values[..opts.prefix];
    let m = train.len() as f64;
    let cl = train.iter().sum::<f64>() / m;
    let sd = (train.iter().map(|v| (v - cl).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let warning = (sd == 0.0).then(|| {
        let w = "training prefix has zero standard deviation; limits collapse onto the centre line".to_string();
        log::warn!("{w}");
        w
    });
    let (lcl, ucl) = (cl - opts.coefficient * sd, cl + opts.coefficient * sd);
    let changepoint = opts.changepoint.unwrap_or(opts.prefix);
    let scan = SignalReport::scan(&values, lcl, ucl, Some(changepoint));
    let report = MonitorReport {
        kind: opts.kind,
        subgroups: values.len(),
        prefix: opts.prefix,
        coefficient: opts.coefficient,
        lcl,
        cl,
        ucl,
        changepoint,
        signals_after_changepoint: scan.signal_indices.iter().filter(|&&i| i > changepoint).count(),
        signal_indices: scan.signal_indices,
        first_signal_after: scan.first_signal_after,
        warning,
        labels: input.labels().to_vec(),
        statistics: values,
    };
    if let Some(dir) = out_dir {
        write_file(&dir.join("report.json"), &to_json(&report))?;
        write_file(&dir.join("annotated.csv"), &report.annotated_csv())?;
    }
    Ok(report)
}

/// The single (n, rho) combination of a spec, for commands that work on one process.
fn single_process(spec: &ExperimentSpec) -> Result<Cell, CliError> {
    let cells = spec.cells()?;
    let first = cells[0];
    if cells.iter().any(|c| c.n != first.n || c.rho != first.rho) {
        return Err(CliError::Validation("this command needs a spec with a single n and rho".into()));
    }
    Ok(first)
}

/// `count` subgroups, in control up to `changepoint` and shifted by `delta`
/// afterwards, as `subgroup,replicate,y,x` rows. Subgroup `s` is drawn from
/// `RngStream::new(seed).child(s)`.
pub fn cmd_simulate_data(
    spec: &ExperimentSpec,
    count: usize,
    changepoint: usize,
    delta: f64,
    output: Option<&Path>,
) -> Result<String, CliError> {
    let cell = single_process(spec)?;
    if count == 0 {
        return Err(CliError::Validation("subgroup count must be positive".into()));
    }
    if changepoint >= count {
        return Err(CliError::Validation(format!("changepoint {changepoint} must be below the count {count}")));
    }
    let shift = ShiftSpec::new(delta).map_err(|e| CliError::Validation(e.to_string()))?;
    let root = RngStream::new(spec.seed);
    let mut out = String::from("subgroup,replicate,y,x\n");
    for s in 1..=count {
        let mut rng = root.child(s as u64);
        let d = if s <= changepoint { ShiftSpec::IN_CONTROL } else { shift };
        let g = sample_subgroup(&cell.params, cell.n, d, &mut rng).map_err(CliError::core(format!("subgroup {s}")))?;
        for (j, (y, x)) in g.pairs().iter().enumerate() {
            writeln!(out, "{s},{},{y},{x}", j + 1).unwrap();
        }
    }
    if let Some(path) = output.or(spec.output.as_deref()) {
        write_file(path, &out)?;
    }
    Ok(out)
}

/// Printed-formula versus quadratic-minimizer weights for one (n, rho).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsReportRow {
    pub n: usize,
    pub rho: f64,
    pub printed: EstimatorWeights,
    pub quadratic: EstimatorWeights,
    /// First-order MSE of `T1` / `T2`.
    pub mse_regression: f64,
    /// Closed-form minimum MSE of `T3`.
    pub mse_t3_closed_form: f64,
    /// Regression MSE minus the two closed-form reduction terms.
    pub mse_t3_decomposed: f64,
    pub mse_printed_first_order: f64,
    pub mse_quadratic_first_order: f64,
    pub reps: u64,
    pub mse_t2_empirical: f64,
    pub mse_printed_empirical: f64,
    pub mse_quadratic_empirical: f64,
}

/// Compares both weight sources analytically and on `spec.reps` simulated
/// in-control subgroups (the same subgroups for every statistic).
pub fn cmd_weights_report(spec: &ExperimentSpec, output: Option<&Path>) -> Result<Vec<WeightsReportRow>, CliError> {
    let mut seen: Vec<(usize, f64)> = Vec::new();
    let mut rows = Vec::new();
    for cell in spec.cells()? {
        if seen.contains(&(cell.n, cell.rho)) {
            continue;
        }
        seen.push((cell.n, cell.rho));
        let (p, n) = (cell.params, cell.n);
        let ctx = || format!("weights at {cell}");
        let printed = weights_for(&p, n, WeightSource::PrintedFormula).map_err(CliError::core(ctx()))?;
        let quadratic = weights_for(&p, n, WeightSource::QuadraticMinimizer).map_err(CliError::core(ctx()))?;
        let t2 = Estimator::with_weights(EstimatorKind::T2, p, quadratic);
        let t3p = Estimator::with_weights(EstimatorKind::T3, p, printed);
        let t3q = Estimator::with_weights(EstimatorKind::T3, p, quadratic);
        let sampler = SummarySampler::new(p, n).map_err(CliError::core(ctx()))?;
        let mut rng = RngStream::new(spec.seed).child(n as u64).child(cell.rho.to_bits());
        let mut sums = [0.0f64; 3];
        for _ in 0..spec.reps {
            let s = sampler.stats(ShiftSpec::IN_CONTROL, &mut rng);
            for (acc, est) in sums.iter_mut().zip([&t2, &t3p, &t3q]) {
                *acc += (est.evaluate(&s).map_err(CliError::core(ctx()))? - p.mu_y()).powi(2);
            }
        }
        let reps = spec.reps as f64;
        rows.push(WeightsReportRow {
            n,
            rho: cell.rho,
            printed,
            quadratic,
            mse_regression: theoretical_mse(EstimatorKind::T2, &p, n).map_err(CliError::core(ctx()))?,
            mse_t3_closed_form: theoretical_mse(EstimatorKind::T3, &p, n).map_err(CliError::core(ctx()))?,
            mse_t3_decomposed: decomposed_mse_t3(&p, n).map_err(CliError::core(ctx()))?,
            mse_printed_first_order: first_order_mse_t3(&p, n, &printed).map_err(CliError::core(ctx()))?,
            mse_quadratic_first_order: first_order_mse_t3(&p, n, &quadratic).map_err(CliError::core(ctx()))?,
            reps: spec.reps,
            mse_t2_empirical: sums[0] / reps,
            mse_printed_empirical: sums[1] / reps,
            mse_quadratic_empirical: sums[2] / reps,
        });
    }
    if let Some(path) = output.or(spec.output.as_deref()) {
        write_file(path, &to_json(&rows))?;
    }
    Ok(rows)
}
