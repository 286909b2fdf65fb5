use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyncopula::cli::{self, Outcome, Overrides};
use dyncopula::config::ExperimentConfig;
use dyncopula::Result;

#[derive(Parser)]
#[command(name = "dyncopula", version, about = "Evolve, simulate and validate dynamic copulas of coupled diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate sample paths and summarize their terminal law.
    Simulate(Common),
    /// Solve the marginal forward equations.
    Marginal(Common),
    /// Evolve the copula lattice from t0 to t1.
    Evolve(Common),
    /// Compare an evolved copula with the empirical copula of simulated paths.
    Validate(Common),
    /// Chapman–Kolmogorov residual of a copula triple.
    Product(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides run.output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides run.seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Copula lattice points per axis (overrides grid.resolution).
    #[arg(long)]
    resolution: Option<usize>,
}

fn run(command: Command) -> Result<Outcome> {
    let (common, runner): (Common, fn(&ExperimentConfig) -> Result<Outcome>) = match command {
        Command::Simulate(c) => (c, cli::run_simulate),
        Command::Marginal(c) => (c, cli::run_marginal),
        Command::Evolve(c) => (c, cli::run_evolve),
        Command::Validate(c) => (c, cli::run_validate),
        Command::Product(c) => (c, cli::run_product_check),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| dyncopula::Error::Configuration(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&common.config)?;
    Overrides { out: common.out, seed: common.seed, resolution: common.resolution }.apply(&mut cfg)?;
    runner(&cfg)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(args.command) {
        Ok(Outcome::Done(summary)) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Ok(Outcome::Failed(f)) => {
            eprintln!("check failed: {}", f.detail);
            println!("{}", f.summary.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
