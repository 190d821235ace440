use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use spc_aux_cli::{
    cmd_arl_curve, cmd_calibrate, cmd_monitor, cmd_simulate_data, cmd_weights_report, read_monitor_input, CliError,
    ExperimentSpec, MonitorOptions,
};
use spc_aux_core::{EstimatorKind, WeightSource};

#[derive(Parser)]
#[command(name = "spc-aux", version, about = "Auxiliary-variable Shewhart control chart experiments")]
struct Cli {
    /// Worker threads for simulation; results do not depend on it.
    #[arg(long, global = true, env = "SPC_AUX_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate limit coefficients for every chart and cell of a spec.
    Calibrate {
        /// Experiment spec JSON.
        spec: PathBuf,
        /// Output JSON file (overrides the spec's `output`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Simulate ARL curves of calibrated charts over the spec's shift grid.
    ArlCurve {
        /// Experiment spec JSON.
        spec: PathBuf,
        /// Calibration JSON written by `calibrate`.
        #[arg(short, long)]
        calibration: PathBuf,
        /// Output directory (overrides the spec's `output`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Flag out-of-control subgroups in a data or statistic CSV.
    Monitor {
        /// CSV with `subgroup,statistic`, `subgroup,y,x` or `subgroup,replicate,y,x` columns.
        data: PathBuf,
        /// Chart kind, required for `subgroup,y,x` input.
        #[arg(short, long)]
        kind: Option<EstimatorKind>,
        /// Spec supplying process parameters for T1..T3 on raw input.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Column of a wide file to monitor instead of `statistic`.
        #[arg(long)]
        column: Option<String>,
        /// Number of leading subgroups used to estimate the limits.
        #[arg(long, default_value_t = 30)]
        prefix: usize,
        /// Limits are mean -/+ coefficient * sd of the prefix.
        #[arg(long, default_value_t = 3.0)]
        coefficient: f64,
        /// Subgroup after which signals count as detections (default: prefix).
        #[arg(long)]
        changepoint: Option<usize>,
        /// T3 weights for raw input: `quadratic-minimizer` or `printed-formula`.
        #[arg(long, default_value = "quadratic-minimizer")]
        weights: WeightSource,
        /// Directory for report.json and annotated.csv; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Generate subgroup data with a mean shift after a changepoint.
    SimulateData {
        /// Experiment spec JSON.
        spec: PathBuf,
        /// Number of subgroups.
        #[arg(long, default_value_t = 50)]
        count: usize,
        /// Last in-control subgroup.
        #[arg(long, default_value_t = 30)]
        changepoint: usize,
        /// Mean shift of y after the changepoint, in units of sigma_y.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        /// Output CSV (overrides the spec's `output`); stdout when neither is set.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare printed-formula and quadratic-minimizer T3 weights.
    WeightsReport {
        /// Experiment spec JSON.
        spec: PathBuf,
        /// Output JSON file (overrides the spec's `output`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable value"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Calibrate { spec, output } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let records = cmd_calibrate(&spec, output.as_deref())?;
            if output.is_none() && spec.output.is_none() {
                print_json(&records);
            }
        }
        Command::ArlCurve { spec, calibration, output } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let curves = cmd_arl_curve(&spec, &calibration, output.as_deref())?;
            if output.is_none() && spec.output.is_none() {
                for c in &curves {
                    print!("{}", c.combined_csv());
                }
            }
        }
        Command::Monitor { data, kind, spec, column, prefix, coefficient, changepoint, weights, output } => {
            let params = match spec {
                Some(path) => {
                    let spec = ExperimentSpec::from_path(&path)?;
                    Some(spec.cells()?[0].params)
                }
                None => None,
            };
            let input = read_monitor_input(&data, column.as_deref())?;
            let opts = MonitorOptions { kind, params, weights, prefix, coefficient, changepoint };
            let report = cmd_monitor(&input, &opts, output.as_deref())?;
            if output.is_none() {
                print_json(&report);
            }
        }
        Command::SimulateData { spec, count, changepoint, delta, output } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let csv = cmd_simulate_data(&spec, count, changepoint, delta, output.as_deref())?;
            if output.is_none() && spec.output.is_none() {
                print!("{csv}");
            }
        }
        Command::WeightsReport { spec, output } => {
            let spec = ExperimentSpec::from_path(&spec)?;
            let rows = cmd_weights_report(&spec, output.as_deref())?;
            if output.is_none() && spec.output.is_none() {
                print_json(&rows);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot start {threads} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
