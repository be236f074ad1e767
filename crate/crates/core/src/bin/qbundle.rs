use std::path::PathBuf;

use clap::{Args, Parser, Subcommand as ClapSubcommand};
use qbundle::cli::{execute, Subcommand};

#[derive(Parser)]
#[command(
    name = "qbundle",
    version,
    about = "Adiabatic generators, curvature and geometric observables of parameter-dependent Hamiltonians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Io {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output file; `.json` selects JSON unless the config says otherwise. Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Fidelity susceptibility along a 1-D grid, with EP flags.
    SweepChi(Io),
    /// Berry curvature over a 2-D grid.
    BerryMap(Io),
    /// Chern numbers over the sphere.
    Chern(Io),
    /// Transport a state along a piecewise-linear path.
    Transport(Io),
    /// Curvature and metric-compatibility residuals on a grid.
    Residuals(Io),
}

fn main() {
    let (sub, io) = match Cli::parse().command {
        Command::SweepChi(io) => (Subcommand::SweepChi, io),
        Command::BerryMap(io) => (Subcommand::BerryMap, io),
        Command::Chern(io) => (Subcommand::Chern, io),
        Command::Transport(io) => (Subcommand::Transport, io),
        Command::Residuals(io) => (Subcommand::Residuals, io),
    };
    std::process::exit(execute(sub, &io.config, io.out.as_deref()) as i32);
}
