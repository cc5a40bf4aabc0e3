//! Command-line harness: configuration, experiment orchestration, and CSV
//! artifact emission for the spectral stochastic Navier-Stokes laboratory.
//!
//! Exit codes: 0 success, 2 when the machinery worked but a property
//! verdict failed, 1 on operational errors.

mod config;
mod experiments;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Config, Kind};

#[derive(Parser)]
#[command(
    name = "snse",
    about = "Spectral laboratory for 2D Navier-Stokes with additive rough noise",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the invariant smoke suite and write checks.csv.
    Validate(RunArgs),
    /// Integrate the transformed equation and dump the trajectory.
    Simulate(RunArgs),
    /// Approximate the pullback omega-limit set of a random ball.
    Pullback(RunArgs),
    /// Flow scaled spheres into the absorbing ball.
    Absorb(RunArgs),
    /// Tabulate decaying-radius verdicts across seeds.
    #[command(name = "classR")]
    ClassR(RunArgs),
    /// Sample and persist a noise path plus transform diagnostics.
    NoiseGen(RunArgs),
    /// Print the resolved setup without running anything.
    Describe(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable key=value override applied after the file.
    #[arg(long = "set")]
    set: Vec<String>,
    /// Output directory; overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread count; results are identical for any value.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides noise.seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.cmd {
        Cmd::Validate(a) => (a, Some(Kind::Validate)),
        Cmd::Simulate(a) => (a, Some(Kind::Simulate)),
        Cmd::Pullback(a) => (a, Some(Kind::Pullback)),
        Cmd::Absorb(a) => (a, Some(Kind::Absorb)),
        Cmd::ClassR(a) => (a, Some(Kind::ClassR)),
        Cmd::NoiseGen(a) => (a, Some(Kind::NoiseGen)),
        Cmd::Describe(a) => (a, None),
    };
    match execute(args, kind) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(args: &RunArgs, kind: Option<Kind>) -> snse_core::Result<bool> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| snse_core::Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    let mut cfg = match &args.config {
        Some(p) => Config::parse(&std::fs::read_to_string(p)?)?,
        None => Config::default(),
    };
    for pair in &args.set {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = args.seed {
        cfg.noise_seed = seed;
    }
    match kind {
        None => {
            let (text, ok) = experiments::describe(&cfg)?;
            print!("{text}");
            Ok(ok)
        }
        Some(k) => {
            cfg.experiment_kind = k;
            let out_dir = args
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from(&cfg.output_directory));
            cfg.output_directory = out_dir.to_string_lossy().into_owned();
            experiments::run(&cfg, &out_dir)
        }
    }
}
