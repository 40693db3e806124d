use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anytime_ncs::cli::{cmd_analyze, cmd_delta, cmd_montecarlo, cmd_simulate, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "anytime-ncs", version, about = "Event-triggered anytime control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stability factors and boundary curves.
    Analyze(Common),
    /// Return-time pmf: closed form vs. simulation.
    #[command(name = "delta-dist")]
    DeltaDist(Common),
    /// Single trajectory trace.
    Simulate(Common),
    /// Paired Monte Carlo over the trigger-radius sweep.
    Montecarlo(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination; stdout when omitted (the report then goes to stderr).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = Some(trials);
        }
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::Analyze(c) | Command::DeltaDist(c) | Command::Simulate(c) | Command::Montecarlo(c) => c,
    };
    let cfg = common.load()?;

    let stdout = io::stdout();
    let stderr = io::stderr();
    let (mut data, mut log): (Box<dyn Write>, Box<dyn Write>) = match &cfg.output {
        Some(path) => (
            Box::new(BufWriter::new(File::create(path)?)),
            Box::new(stdout.lock()),
        ),
        None => (Box::new(stdout.lock()), Box::new(stderr.lock())),
    };

    let result = match &cli.command {
        Command::Analyze(_) => cmd_analyze(&cfg, &mut data, &mut log),
        Command::DeltaDist(_) => cmd_delta(&cfg, &mut data, &mut log).map(|_| ()),
        Command::Simulate(_) => cmd_simulate(&cfg, &mut data, &mut log).map(|_| ()),
        Command::Montecarlo(_) => cmd_montecarlo(&cfg, common.threads, &mut data, &mut log).map(|_| ()),
    };
    data.flush()?;
    log.flush()?;
    result
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
