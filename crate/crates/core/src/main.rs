use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddflow::config::{parse_config, RunConfig};
use ddflow::runner::{run, Command};

#[derive(Parser)]
#[command(
    name = "ddflow",
    about = "Finite-element solver and optimizer for box-constrained control of doubly diffusive flow",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file; omitted means all defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for this run's artifacts (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured mesh subdivision count.
    #[arg(long)]
    n: Option<usize>,
    /// Overrides the configured regularization weight.
    #[arg(long, allow_negative_numbers = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the coupled state system at the initial control.
    SolveState(RunArgs),
    /// Run the projected-gradient descent and export the result.
    Optimize(RunArgs),
    /// Compare the reduced gradient against central differences.
    CheckGradient(RunArgs),
    /// Verify the adjoint: transpose consistency and the duality pairing.
    CheckAdjoint(RunArgs),
    /// Second-order diagnostics around the computed optimum.
    CheckSsc(RunArgs),
    /// Manufactured-solution convergence study over three mesh levels.
    MmsConvergence(RunArgs),
}

impl Cmd {
    fn split(self) -> (Command, RunArgs) {
        match self {
            Cmd::SolveState(a) => (Command::SolveState, a),
            Cmd::Optimize(a) => (Command::Optimize, a),
            Cmd::CheckGradient(a) => (Command::CheckGradient, a),
            Cmd::CheckAdjoint(a) => (Command::CheckAdjoint, a),
            Cmd::CheckSsc(a) => (Command::CheckSsc, a),
            Cmd::MmsConvergence(a) => (Command::MmsConvergence, a),
        }
    }
}

fn load_config(args: &RunArgs) -> ddflow::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => parse_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(lambda) = args.lambda {
        cfg.params.lambda = lambda;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let (command, args) = Cli::parse().command.split();
    let cfg = match load_config(&args) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match run(command, &cfg, &args.out) {
        Ok(report) => {
            print!("{report}");
            println!("artifacts written to {}", args.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
