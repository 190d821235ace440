//! Command implementations behind the `spc-aux` binary.
//!
//! Every command is a plain function so the binary, the integration tests and
//! the acceptance suite share one code path.

mod commands;
mod data;
pub mod spec;

use thiserror::Error;

pub use commands::{
    calibrated_chart, cmd_arl_curve, cmd_calibrate, cmd_monitor, cmd_simulate_data, cmd_weights_report, CellCurves, MonitorOptions,
    MonitorReport, WeightsReportRow, COMBINED_CSV_HEADER,
};
pub use data::{read_monitor_input, MonitorInput};
pub use spec::{Cell, ExperimentSpec};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("ragged subgroups: {0}")]
    Ragged(String),
    #[error("training prefix has {0} subgroups, at least 10 are needed")]
    Prefix(usize),
    #[error("{context}: {source}")]
    Core { context: String, source: spc_aux_core::Error },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// Process exit code: 2 validation, 3 calibration file, 4 ragged
    /// subgroups, 5 short training prefix, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 2,
            Self::Core { source: spc_aux_core::Error::InvalidArgument(_), .. } => 2,
            Self::Calibration(_) => 3,
            Self::Ragged(_) => 4,
            Self::Prefix(_) => 5,
            Self::Core { .. } | Self::Io { .. } | Self::Csv(_) => 1,
        }
    }

    pub(crate) fn core(context: impl Into<String>) -> impl FnOnce(spc_aux_core::Error) -> Self {
        let context = context.into();
        move |source| Self::Core { context, source }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.display().to_string(), source }
    }
}
