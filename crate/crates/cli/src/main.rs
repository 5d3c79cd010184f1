//! `dhnsim`: size a lab network, simulate it and compare runs.
//!
//! Exit codes: 0 success, 1 other failure, 2 config parse or validation
//! error, 3 infeasible sizing, 4 integration failure, 5 t* span mismatch.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "dhnsim", version, about = "District heating network simulator and similitude toolkit")]
struct Cli {
    /// Directory for output files.
    #[arg(long, global = true, env = "DHN_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,

    /// Edit a config key, `section.key=value` (e.g. `segment U1.length=3`).
    #[arg(long = "override", global = true, value_name = "K=V")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Size a lab network from a full-scale one.
    Scale {
        #[arg(long)]
        full: PathBuf,
        #[arg(long)]
        lab_constraints: PathBuf,
    },
    /// Run a scenario and write the trajectory CSV with its metadata sidecar.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Output file name inside the output directory.
        #[arg(long, default_value = "trajectory.csv")]
        name: String,
    },
    /// Write the nondimensional form of a trajectory.
    Nondim {
        trajectory: PathBuf,
        /// Base file (`[base]` with rho, mdot_i, t_s, d); defaults to the sidecar.
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Compare two trajectories on the shared t* span.
    Compare {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        base_a: Option<PathBuf>,
        #[arg(long)]
        base_b: Option<PathBuf>,
    },
    /// Efficiency, energy breakdown, delay and statistics of a trajectory.
    Metrics {
        trajectory: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Scenario whose steady band and window define the phases.
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
    /// Check a model (and optionally a scenario) without running it.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scenario: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    scenario: PathBuf,
    /// Seed for auto-tuning perturbations.
    #[arg(long)]
    seed: Option<u64>,
    /// Integration step [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Well-mixed volumes per pipe segment.
    #[arg(long)]
    subsegments: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
