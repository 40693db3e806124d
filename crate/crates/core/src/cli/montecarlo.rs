//! Paired Monte Carlo over a trigger-radius sweep.
//!
//! Trial `i` of every `(d, controller)` cell uses `RngStream::new(seed, i)`,
//! so both controllers see the same initial state, channel, processor and
//! disturbance draws. Per-trial results are collected in trial order and
//! reduced sequentially, which keeps the summary independent of the number of
//! worker threads.

use std::io::Write;

use rayon::prelude::*;

use crate::runtime::{channel_utilization, empirical_cost, Controller, RngStream, RunOutcome};

use super::config::{ExperimentConfig, DEFAULT_TRIALS};
use super::{fmt_pct, fmt_sig6, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub d: f64,
    pub controller: Controller,
    pub trials: u64,
    pub completed: u64,
    pub diverged: u64,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub mean_utilization: f64,
    pub se_utilization: f64,
}

/// Baseline-minus-anytime cost differences over trials where both completed.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedComparison {
    pub d: f64,
    pub pairs: u64,
    pub mean_diff: f64,
    pub se_diff: f64,
    /// `mean_diff / se_diff`; positive when the anytime controller is cheaper.
    pub t_stat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub cells: Vec<CellSummary>,
    pub paired: Vec<PairedComparison>,
}

impl MonteCarloSummary {
    pub fn cell(&self, d: f64, controller: Controller) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.d == d && c.controller == controller)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record([
            "d",
            "controller",
            "trials",
            "mean_cost",
            "se_cost",
            "mean_utilization_pct",
            "se_utilization_pct",
            "diverged",
        ])?;
        for c in &self.cells {
            wtr.write_record([
                c.d.to_string(),
                c.controller.name().to_string(),
                c.trials.to_string(),
                fmt_sig6(c.mean_cost),
                fmt_sig6(c.se_cost),
                fmt_pct(c.mean_utilization),
                fmt_pct(c.se_utilization),
                c.diverged.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Sample mean and standard error of the mean.
fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type TrialResult = Vec<Option<(f64, f64)>>;

pub fn run_montecarlo(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<MonteCarloSummary, CliError> {
    cfg.validate()?;
    let trials = cfg.trials.unwrap_or(DEFAULT_TRIALS);
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("threads: {e}")))?;

    let mut cells = Vec::new();
    let mut paired = Vec::new();
    for &d in &cfg.d_sweep {
        let setup = cfg.closed_loop(d)?;
        let results: Vec<TrialResult> = pool.install(|| {
            (0..trials)
                .into_par_iter()
                .map(|i| {
                    let base = RngStream::new(cfg.seed, i);
                    cfg.controllers
                        .iter()
                        .map(|&ctrl| {
                            let mut rng = base.clone();
                            match setup.run(ctrl, cfg.horizon, &mut rng)? {
                                RunOutcome::Completed(t) => {
                                    Ok(Some((empirical_cost(&t), channel_utilization(&t))))
                                }
                                RunOutcome::Diverged(_) => Ok(None),
                            }
                        })
                        .collect::<Result<TrialResult, CliError>>()
                })
                .collect::<Result<Vec<_>, CliError>>()
        })?;

        for (ci, &ctrl) in cfg.controllers.iter().enumerate() {
            let done: Vec<(f64, f64)> = results.iter().filter_map(|r| r[ci]).collect();
            if done.is_empty() {
                return Err(CliError::AllDiverged {
                    d,
                    controller: ctrl.name(),
                });
            }
            let costs: Vec<f64> = done.iter().map(|r| r.0).collect();
            let utils: Vec<f64> = done.iter().map(|r| r.1).collect();
            let (mean_cost, se_cost) = mean_se(&costs);
            let (mean_utilization, se_utilization) = mean_se(&utils);
            cells.push(CellSummary {
                d,
                controller: ctrl,
                trials,
                completed: done.len() as u64,
                diverged: trials - done.len() as u64,
                mean_cost,
                se_cost,
                mean_utilization,
                se_utilization,
            });
        }

        let bi = cfg.controllers.iter().position(|&c| c == Controller::Baseline);
        let ai = cfg.controllers.iter().position(|&c| c == Controller::Anytime);
        if let (Some(bi), Some(ai)) = (bi, ai) {
            let diffs: Vec<f64> = results
                .iter()
                .filter_map(|r| match (r[bi], r[ai]) {
                    (Some(b), Some(a)) => Some(b.0 - a.0),
                    _ => None,
                })
                .collect();
            let (mean_diff, se_diff) = mean_se(&diffs);
            let t_stat = if se_diff > 0.0 {
                mean_diff / se_diff
            } else if mean_diff == 0.0 {
                0.0
            } else {
                mean_diff.signum() * f64::INFINITY
            };
            paired.push(PairedComparison {
                d,
                pairs: diffs.len() as u64,
                mean_diff,
                se_diff,
                t_stat,
            });
        }
    }
    Ok(MonteCarloSummary { cells, paired })
}
