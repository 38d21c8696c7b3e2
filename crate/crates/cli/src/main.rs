use clap::{Args, Parser, Subcommand};
use ostab_cli::{run_command, Command};
use std::path::PathBuf;

/// Output-stability analysis of disturbed nonlinear systems.
#[derive(Parser)]
#[command(name = "ostab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a trajectory ensemble and export it.
    Simulate(RunArgs),
    /// Run the configured stability property checks on an ensemble.
    Check(RunArgs),
    /// Build the value-function table and run its certificates.
    Lyapunov(RunArgs),
    /// Derive and sample gain constructions.
    Gains(RunArgs),
    /// List the built-in system catalog.
    Catalog,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides the config's `simulation.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    let code = match cli.command {
        Cmd::Simulate(args) => dispatch(Command::Simulate, &args),
        Cmd::Check(args) => dispatch(Command::Check, &args),
        Cmd::Lyapunov(args) => dispatch(Command::Lyapunov, &args),
        Cmd::Gains(args) => dispatch(Command::Gains, &args),
        Cmd::Catalog => run_command(Command::Catalog, None, None, None),
    };
    std::process::exit(code);
}

fn dispatch(command: Command, args: &RunArgs) -> i32 {
    run_command(
        command,
        Some(&args.config),
        args.out.as_deref(),
        args.seed,
    )
}
