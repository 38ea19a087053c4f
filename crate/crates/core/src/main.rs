use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use twofluid::closure::ClosureTolerances;
use twofluid::harness::experiments::{ensure_out_dir, write_json};
use twofluid::harness::{self, parse_config, ConfigOverrides, RunConfig, Scenario};
use twofluid::{Error, Result};

/// Viscous two-fluid flow with a pressure-equilibrium closure.
#[derive(Parser)]
#[command(name = "twofluid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario; writes timeseries.csv, summary.json, state_final.csv.
    Run(Common),
    /// Compute the zero-velocity steady state; writes steady.json.
    Steady(Common),
    /// Grid-refinement study; writes convergence.json.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Nested cell counts, finest last (it serves as the reference).
        #[arg(long, value_delimiter = ',', default_value = "50,100,200,400,800")]
        levels: Vec<usize>,
    },
    /// Lipschitz stability under smooth data perturbations; writes stability.json.
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1e-2,1e-3,1e-4")]
        deltas: Vec<f64>,
    },
    /// Compare against a single-fluid solver (needs gamma_plus == gamma_minus); writes reduction.json.
    ReduceCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Closure residual tolerance used by the two-fluid solver.
        #[arg(long, default_value_t = 1e-12)]
        residual_tol: f64,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_cells: Option<usize>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    cfl: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma_plus: Option<f64>,
    #[arg(long)]
    gamma_minus: Option<f64>,
    /// One of uniform, smooth-bump, two-zone, near-vacuum-fraction.
    #[arg(long)]
    scenario: Option<String>,
    /// Observer sampling interval.
    #[arg(long)]
    cadence: Option<f64>,
    /// Existing output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?),
            None => None,
        };
        let flags = ConfigOverrides {
            scenario: self.scenario.as_deref().map(str::parse::<Scenario>).transpose()?,
            n_cells: self.n_cells,
            t_end: self.t_end,
            cfl: self.cfl,
            mu: self.mu,
            gamma_plus: self.gamma_plus,
            gamma_minus: self.gamma_minus,
            cadence: self.cadence,
            out: self.out.clone(),
            seed: self.seed,
        };
        parse_config(text.as_deref(), &flags)
    }
}

fn emit<T: Serialize>(out_dir: &Path, file: &str, value: &T) -> Result<()> {
    write_json(&out_dir.join(file), value)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.resolve()?;
            let summary = harness::run_simulation(&cfg)?;
            let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Serialize(e.to_string()))?;
            println!("{text}");
        }
        Command::Steady(common) => {
            let cfg = common.resolve()?;
            ensure_out_dir(&cfg.out)?;
            emit(&cfg.out, "steady.json", &harness::run_steady(&cfg)?)?;
        }
        Command::Convergence { common, levels } => {
            let cfg = common.resolve()?;
            ensure_out_dir(&cfg.out)?;
            emit(&cfg.out, "convergence.json", &harness::run_convergence(&cfg, &levels)?)?;
        }
        Command::Stability { common, deltas } => {
            let cfg = common.resolve()?;
            ensure_out_dir(&cfg.out)?;
            emit(&cfg.out, "stability.json", &harness::run_stability(&cfg, &deltas)?)?;
        }
        Command::ReduceCheck {
            common,
            steps,
            residual_tol,
        } => {
            let cfg = common.resolve()?;
            ensure_out_dir(&cfg.out)?;
            let tol = ClosureTolerances::new(residual_tol, ClosureTolerances::default().max_iterations)?;
            emit(&cfg.out, "reduction.json", &harness::run_reduction_check(&cfg, steps, tol)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
