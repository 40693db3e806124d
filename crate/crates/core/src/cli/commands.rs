//! Subcommand bodies. Each writes its CSV to `data` and its `key=value`
//! report lines to `log`.

use std::io::Write;

use crate::analysis::{analyze, boundary_curves, build_lambda_chain};
use crate::oracle::{chi_square_test, simulate_lambda_chain_capped, tv_distance, write_comparison_csv};
use crate::runtime::{channel_utilization, empirical_cost, RngStream, RunOutcome, Trace};

use super::config::ExperimentConfig;
use super::{fmt_pct, fmt_sig6, run_montecarlo, CliError, MonteCarloSummary};

/// Longest single excursion the delta oracle simulates before giving up.
const MAX_EXCURSION: usize = 10_000_000;

/// Gamma and Omega at `(alpha, rho)` plus both stability boundaries over the
/// configured rho grid.
pub fn cmd_analyze(cfg: &ExperimentConfig, data: &mut dyn Write, log: &mut dyn Write) -> Result<(), CliError> {
    cfg.validate()?;
    let env = cfg.stochastic_env()?;
    let plant = cfg.base_plant()?;
    let alpha = cfg.alpha.unwrap_or(plant.alpha);
    let rho = cfg.rho.unwrap_or(plant.rho);
    if alpha < rho {
        return Err(CliError::Config(format!("alpha: {alpha} is below rho = {rho}")));
    }
    let res = analyze(&env, alpha, rho)?;
    writeln!(log, "q={}", env.q)?;
    writeln!(log, "p0={}", env.p0())?;
    writeln!(log, "capacity={}", env.capacity)?;
    writeln!(log, "alpha={alpha}")?;
    writeln!(log, "rho={rho}")?;
    writeln!(log, "gamma={}", res.gamma)?;
    writeln!(log, "gamma_stable={}", res.gamma < 1.0)?;
    writeln!(log, "omega={}", res.omega)?;
    writeln!(log, "omega_series={}", res.omega_series)?;
    writeln!(log, "omega_series_tail_bound={}", res.omega_series_tail)?;
    writeln!(log, "omega_stable={}", res.omega < 1.0)?;
    writeln!(log, "alpha_star_baseline={}", res.alpha_star_baseline)?;
    writeln!(log, "alpha_star_anytime={}", res.alpha_star_anytime)?;
    writeln!(log, "delta_mean={}", res.delta_mean)?;

    let curves = boundary_curves(&env, &cfg.rho_grid.values())?;
    let mut wtr = csv::Writer::from_writer(data);
    wtr.write_record(["rho", "alpha_star_baseline", "alpha_star_anytime"])?;
    for pt in &curves {
        wtr.write_record([
            pt.rho.to_string(),
            pt.alpha_star_baseline.to_string(),
            pt.alpha_star_anytime.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaReport {
    pub rows: usize,
    pub tv: f64,
    pub chi_square_passed: bool,
    pub passed: bool,
}

/// Analytic return-time pmf against the chain oracle. Fails with
/// [`CliError::Threshold`] when the TV distance reaches the configured limit.
pub fn cmd_delta(cfg: &ExperimentConfig, data: &mut dyn Write, log: &mut dyn Write) -> Result<DeltaReport, CliError> {
    cfg.validate()?;
    let env = cfg.stochastic_env()?;
    let chain = build_lambda_chain(&env);
    if chain.return1 == 0.0 {
        return Err(CliError::Config(
            "env: q = 1 and p0 = 0 means the buffer never empties; return times are undefined".into(),
        ));
    }
    let len = chain
        .truncation_len(cfg.delta.tail_mass)
        .ok_or_else(|| CliError::Config("env: return-time tail decays too slowly to truncate".into()))?;
    let analytic = chain.delta_pmf_prefix(len);
    let mut rng = RngStream::new(cfg.seed, 0);
    let empirical = simulate_lambda_chain_capped(&env, cfg.delta.samples, MAX_EXCURSION, &mut rng)
        .ok_or_else(|| CliError::Config("env: a simulated excursion exceeded the step cap".into()))?;
    let rows = len.max(empirical.max_outcome().unwrap_or(1));
    write_comparison_csv(data, &analytic, &empirical, rows)?;

    let tv = tv_distance(&empirical, &analytic);
    let chi = chi_square_test(&empirical, &analytic, 25.0, 0.999);
    writeln!(log, "samples={}", empirical.total)?;
    writeln!(log, "pr_delta1_analytic={}", chain.return1)?;
    writeln!(log, "pr_delta1_empirical={}", empirical.frequency(1))?;
    writeln!(log, "pr_delta1_half_width={}", empirical.half_width_at(chain.return1))?;
    writeln!(log, "tv={tv}")?;
    writeln!(log, "tv_threshold={}", cfg.delta.tv_threshold)?;
    writeln!(log, "chi_square={} dof={} critical={}", chi.statistic, chi.dof, chi.critical)?;
    let passed = tv < cfg.delta.tv_threshold;
    writeln!(log, "passed={passed}")?;
    if !passed {
        return Err(CliError::Threshold(format!(
            "tv = {tv} >= {}",
            cfg.delta.tv_threshold
        )));
    }
    Ok(DeltaReport {
        rows,
        tv,
        chi_square_passed: chi.passed,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateReport {
    pub trace: Trace,
    pub cost: f64,
    pub utilization: f64,
    pub diverged: bool,
}

/// One trajectory (stream 0) with the configured controller and radius `d`.
pub fn cmd_simulate(cfg: &ExperimentConfig, data: &mut dyn Write, log: &mut dyn Write) -> Result<SimulateReport, CliError> {
    cfg.validate()?;
    if cfg.trials.unwrap_or(1) != 1 {
        return Err(CliError::Config("trials: simulate runs exactly one trajectory".into()));
    }
    let [ctrl] = cfg.controllers[..] else {
        return Err(CliError::Config(
            "controllers: simulate needs exactly one controller".into(),
        ));
    };
    let setup = cfg.closed_loop(cfg.d)?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let (trace, diverged) = match setup.run(ctrl, cfg.horizon, &mut rng)? {
        RunOutcome::Completed(t) => (t, false),
        RunOutcome::Diverged(d) => (d.partial, true),
    };
    trace.write_csv(data)?;
    let cost = empirical_cost(&trace);
    let utilization = channel_utilization(&trace);
    writeln!(log, "controller={}", ctrl.name())?;
    writeln!(log, "d={}", cfg.d)?;
    writeln!(log, "steps={}", trace.records.len())?;
    writeln!(log, "J={}", fmt_sig6(cost))?;
    writeln!(log, "utilization_pct={}", fmt_pct(utilization))?;
    writeln!(log, "diverged={diverged}")?;
    Ok(SimulateReport {
        trace,
        cost,
        utilization,
        diverged,
    })
}

/// Cost/utilization summary per `(d, controller)` cell.
pub fn cmd_montecarlo(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
    data: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<MonteCarloSummary, CliError> {
    let summary = run_montecarlo(cfg, threads)?;
    summary.write_csv(data)?;
    for c in &summary.cells {
        writeln!(
            log,
            "d={} controller={} J={} se={} utilization_pct={} diverged={}",
            c.d,
            c.controller.name(),
            fmt_sig6(c.mean_cost),
            fmt_sig6(c.se_cost),
            fmt_pct(c.mean_utilization),
            c.diverged
        )?;
    }
    for p in &summary.paired {
        writeln!(
            log,
            "d={} paired_pairs={} paired_mean_diff={} paired_se={} paired_t={}",
            p.d,
            p.pairs,
            fmt_sig6(p.mean_diff),
            fmt_sig6(p.se_diff),
            fmt_sig6(p.t_stat)
        )?;
    }
    Ok(summary)
}
