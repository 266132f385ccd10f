//! `cempc`: bounds, solves, closed-loop simulations and Monte-Carlo sweeps from a
//! TOML run configuration.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::{CliError, Run};
use config::{ConfigError, Preset, RunConfig, REFERENCE};
use cempc::bounds::FormulaVariant;
use cempc::experiments::SweepKind;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(name = "cempc", version, about = "Certainty-equivalence MPC bounds and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate every bound and write `bounds.json`; exits 3 when the stability condition fails.
    Bounds,
    /// Solve the finite-horizon problem at `x0` with the nominal parameter.
    Solve,
    /// Simulate the closed loop against `theta_true`.
    Simulate,
    /// Run a Monte-Carlo sweep: input-perturb, scalable, ratio or horizon.
    Sweep {
        #[arg(value_parser = parse_kind)]
        kind: SweepKind,
    },
    /// Tabulate the ratio bound over `horizon_range` and pick its minimizer.
    OptimalHorizon,
    /// Compute the constant bundle feeding the bounds.
    Constants,
    /// Print the documented configuration with every default.
    ConfigReference,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Run configuration; the `--preset` configuration when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration used without `--config`.
    #[arg(long, global = true, value_enum, default_value = "tanh")]
    preset: Preset,
    /// Master seed for every sampled quantity.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Initial state as a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    /// `n` sets the horizon; `a..b` sets the searched and swept horizon range.
    #[arg(long, global = true)]
    horizon: Option<String>,
    /// Radius of the parameter mismatch ball.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// `<toggle>=<printed|corrected>` for alpha_first_order, beta_cross_term or
    /// beta_star_scaling; repeatable.
    #[arg(long, global = true)]
    variant: Vec<String>,
}

fn parse_kind(s: &str) -> Result<SweepKind, String> {
    s.parse()
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.into() }
}

impl Overrides {
    fn apply(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::preset(self.preset),
        };
        if let Some(seed) = self.seed {
            c.seed = seed;
        }
        if let Some(out) = &self.out {
            c.output_dir = out.clone();
        }
        if let Some(x0) = &self.x0 {
            c.x0 = x0.clone();
        }
        if let Some(eps) = self.epsilon {
            c.epsilon = eps;
        }
        if let Some(h) = &self.horizon {
            match h.split_once("..") {
                Some((a, b)) => {
                    let parse = |s: &str| s.trim().parse::<usize>().map_err(|e| invalid("--horizon", e.to_string()));
                    let (a, b) = (parse(a)?, parse(b)?);
                    c.horizon_range = [a, b];
                    c.sweep.horizons = (a..=b).collect();
                }
                None => c.horizon = h.trim().parse().map_err(|e: std::num::ParseIntError| invalid("--horizon", e.to_string()))?,
            }
        }
        for v in &self.variant {
            let (toggle, value) =
                v.split_once('=').ok_or_else(|| invalid("--variant", "expected <toggle>=<printed|corrected>"))?;
            let value = match value {
                "printed" => FormulaVariant::Printed,
                "corrected" => FormulaVariant::Corrected,
                other => return Err(invalid("--variant", format!("unknown value '{other}'"))),
            };
            c.set_variant(toggle, value)?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli.overrides.apply()?;
    if let Command::ConfigReference = cli.command {
        print!("{REFERENCE}\n{}", config.to_toml());
        return Ok(());
    }
    let run = Run::new(config)?;
    match cli.command {
        Command::Bounds => run.bounds(),
        Command::Solve => run.solve(),
        Command::Simulate => run.simulate(),
        Command::Sweep { kind } => run.sweep(kind),
        Command::OptimalHorizon => run.optimal_horizon(),
        Command::Constants => run.constants_bundle(),
        Command::ConfigReference => unreachable!("handled above"),
    }
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
