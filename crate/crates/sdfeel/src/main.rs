//! Command-line front end: `simulate` runs the configured scheme(s) and
//! writes trace CSVs plus a metadata sidecar; `sweep` replicates a run
//! along one axis; `bounds` prints the convergence-bound breakdown or a
//! monotonicity scan; `topology` prints the gossip matrix and its
//! spectrum. Log verbosity comes from `RUST_LOG` (error/warn/info/debug).
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad file,
//! unknown key, cross-field violation), 3 for runtime failures (numerical
//! errors, I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdfeel::bounds::ScanAxis;
use sdfeel::config::{parse_config, RunConfig};
use sdfeel::harness::{bounds_csv, bounds_scan_csv, run_experiment, run_sweep, topology_csv, SweepAxis};
use sdfeel::SimError;

#[derive(Parser)]
#[command(name = "sdfeel", version, about = "Semi-decentralized federated edge learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scheme(s) and write trace CSVs plus metadata.
    Simulate {
        /// TOML run configuration (empty file = documented defaults).
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed from the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory from the config file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the base config along one axis, aggregating all traces.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: tau1, tau2, alpha, beta, eta, topology.
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated axis values, e.g. `1,2,10,20` or `ring,complete`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Comma-separated replication seeds (default: the config's seed).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the convergence-bound breakdown for this config as CSV.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Scan axis (tau1, tau2, or zeta_alpha) instead of a single row.
        #[arg(long, requires = "grid")]
        axis: Option<ScanAxis>,
        /// Comma-separated grid for the scan axis.
        #[arg(long, value_delimiter = ',', requires = "axis")]
        grid: Vec<f64>,
    },
    /// Print the gossip matrix, its eigenvalues and zeta as CSV.
    Topology {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(config: &PathBuf, seed: Option<u64>, out: Option<&PathBuf>) -> Result<RunConfig, SimError> {
    let mut parsed = parse_config(config)?;
    if let Some(seed) = seed {
        parsed.seed = seed;
    }
    if let Some(out) = out {
        parsed.out_dir = out.to_string_lossy().into_owned();
    }
    Ok(parsed)
}

fn run(cli: Cli) -> Result<(), SimError> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let config = load(&config, seed, out.as_ref())?;
            let written = run_experiment(&config)?;
            for path in written {
                println!("{}", path.display());
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            out,
        } => {
            let config = load(&config, None, out.as_ref())?;
            let seeds = if seeds.is_empty() { vec![config.seed] } else { seeds };
            let outcome = run_sweep(&config, axis, &values, &seeds)?;
            println!("{}", outcome.aggregate.display());
            for path in outcome.cell_files {
                println!("{}", path.display());
            }
            for (value, seed, err) in &outcome.failures {
                eprintln!("cell {}={value} seed={seed} failed: {err}", axis.label());
            }
        }
        Command::Bounds { config, axis, grid } => {
            let config = load(&config, None, None)?;
            let text = match axis {
                Some(axis) => bounds_scan_csv(&config, axis, &grid)?,
                None => bounds_csv(&config)?,
            };
            print!("{text}");
        }
        Command::Topology { config } => {
            let config = load(&config, None, None)?;
            print!("{}", topology_csv(&config)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config(_) | SimError::InvalidArgument(_) | SimError::InvalidTopology(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(3),
            }
        }
    }
}
