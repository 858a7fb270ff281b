//! `spl-depth`: simulate single-photon lidar acquisitions, extract signal
//! photons and reconstruct depth.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Settings;
use failure::{CliResult, Failure};

const AFTER_HELP: &str = "\
Settings can come from a TOML file (--config) using the flag names in
snake_case; flags given on the command line win.

Scene images (--scene csv|pgm with --reflectivity and --depth):
  csv  row-major, comma-separated decimals; reflectivity in [0, 1], depth in metres
  pgm  binary P5, 8 or 16 bit; code v maps to reflectivity v/maxval and to
       depth (v/maxval)*z_max, clamped just below z_max = c*T_r/2

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.";

#[derive(Parser, Debug)]
#[command(name = "spl-depth", version, about, after_help = AFTER_HELP)]
struct Cli {
    /// TOML settings file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker thread cap (default: available parallelism)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(flatten)]
    settings: Settings,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Output {
    /// Existing directory receiving the artifacts
    #[arg(long, short)]
    output: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a timestamp cube (cube.sptc)
    Simulate {
        #[command(flatten)]
        out: Output,
        /// Also write the cube as CSV
        #[arg(long)]
        csv: bool,
    },
    /// Extract signal photons from a cube (censored.sptc)
    Filter {
        #[command(flatten)]
        out: Output,
        /// Cube written by `simulate`
        #[arg(long)]
        cube: PathBuf,
    },
    /// Reconstruct depth from a censored cube
    Estimate {
        #[command(flatten)]
        out: Output,
        /// Censored cube written by `filter`
        #[arg(long)]
        censored: PathBuf,
    },
    /// Simulate (or load --cube), filter and estimate
    Pipeline {
        #[command(flatten)]
        out: Output,
        #[arg(long)]
        cube: Option<PathBuf>,
    },
    /// Compare ROM errors against the phase-transition prediction
    VerifyTheory {
        #[command(flatten)]
        out: Output,
    },
    /// RMSE of several filters over a range of SBR or signal PPP
    Sweep {
        #[command(flatten)]
        out: Output,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    let settings = match &cli.config {
        Some(path) => cli.settings.over(Settings::load(path)?),
        None => cli.settings,
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::runtime)?;
    }
    match cli.command {
        Command::Simulate { out, csv } => commands::simulate(&settings, &out.output, csv),
        Command::Filter { out, cube } => commands::filter(&settings, &out.output, &cube),
        Command::Estimate { out, censored } => commands::estimate(&settings, &out.output, &censored),
        Command::Pipeline { out, cube } => commands::pipeline(&settings, &out.output, cube.as_deref()),
        Command::VerifyTheory { out } => commands::verify_theory(&settings, &out.output),
        Command::Sweep { out } => commands::sweep(&settings, &out.output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
