//! Experiment orchestration behind the `anytime-ncs` binary.

mod commands;
pub mod config;
mod montecarlo;

pub use commands::{cmd_analyze, cmd_delta, cmd_montecarlo, cmd_simulate, DeltaReport, SimulateReport};
pub use config::ExperimentConfig;
pub use montecarlo::{run_montecarlo, CellSummary, MonteCarloSummary, PairedComparison};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("acceptance threshold failed: {0}")]
    Threshold(String),
    #[error("every trial diverged for d = {d}, controller = {controller}")]
    AllDiverged { d: f64, controller: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Analysis(#[from] crate::analysis::AnalysisError),
    #[error(transparent)]
    Runtime(#[from] crate::runtime::RuntimeError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Threshold(_) => 3,
            _ => 1,
        }
    }
}

/// Six significant digits.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.5e}")
    }
}

/// Two decimal places.
pub fn fmt_pct(x: f64) -> String {
    format!("{x:.2}")
}
