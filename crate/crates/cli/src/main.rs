use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fairsched_cli::{
    load_config, run_distributed, run_simulate, run_solve, validate, CliError, RunConfig,
    EXIT_NOT_CONVERGED, EXIT_OK,
};

#[derive(Parser)]
#[command(
    name = "fairsched",
    version,
    about = "Max-min fair rate allocation for sensor scheduling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Caps the inner solver and distributed iteration counts.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the max-min fair allocation and emit traces.
    Solve(Common),
    /// Monte Carlo check of an allocation against the analytic costs.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Allocation file (`allocation.csv` from `solve`); solves first if omitted.
        #[arg(long)]
        allocation: Option<PathBuf>,
    },
    /// Graph-local solver compared with the centralized one.
    Distributed(Common),
    /// Parse and check a config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

fn prepare(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(iters) = common.max_iters {
        cfg.solver.max_inner_iters = iters;
        if let Some(d) = cfg.distributed.as_mut() {
            d.config.max_iters = iters;
        }
    }
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Solve(common) => {
            let (cfg, out) = prepare(&common)?;
            let res = run_solve(&cfg, &out)?;
            println!("allocation: {:?}", res.solution.allocation.rates());
            println!("costs: {:?}", res.costs);
            if res.converged() {
                Ok(EXIT_OK)
            } else {
                eprintln!(
                    "solver hit its iteration limit; traces written to {}",
                    out.display()
                );
                Ok(EXIT_NOT_CONVERGED)
            }
        }
        Command::Simulate { common, allocation } => {
            let (cfg, out) = prepare(&common)?;
            let res = run_simulate(&cfg, allocation.as_deref(), &out)?;
            for (i, gap) in res.relative_gaps.iter().enumerate() {
                println!(
                    "process {}: rate {} empirical {} analytic {} gap {:.4}%",
                    i + 1,
                    res.rates[i],
                    res.results[i].empirical_avg_error,
                    res.analytic[i],
                    100.0 * gap
                );
            }
            Ok(EXIT_OK)
        }
        Command::Distributed(common) => {
            let (cfg, out) = prepare(&common)?;
            let res = run_distributed(&cfg, &out)?;
            let cmp = &res.comparison;
            println!("distributed: {:?}", cmp.distributed.allocation.rates());
            println!("centralized: {:?}", cmp.centralized.allocation.rates());
            println!(
                "linf gap {:e}, value gap {:e}, dual spread {:e}",
                cmp.linf_gap,
                cmp.value_gap,
                cmp.distributed.state.dual_spread()
            );
            Ok(if res.converged() {
                EXIT_OK
            } else {
                EXIT_NOT_CONVERGED
            })
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(&config)?;
            println!("{}", validate(&cfg)?);
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
