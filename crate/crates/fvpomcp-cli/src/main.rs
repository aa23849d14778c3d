//! Benchmark CLI: run seeded experiment sweeps from a TOML config and run the
//! mixture-of-experts verification bench.

use anyhow::Context;
use clap::{Parser, Subcommand};
use fvpomcp::harness::{run_moe_verify, run_sweep_to_dir, ExperimentConfig};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "fvpomcp", about = "Factored-value POMCP benchmark harness", version)]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long)]
    dump_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment sweep described by a config file.
    Run {
        config: PathBuf,
        /// Override the base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the worker count (0 = one per core).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Verify the mixture-of-experts estimation guarantees and emit a
    /// residual CSV.
    MoeVerify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    if cli.dump_defaults {
        print!("{}", ExperimentConfig::default().to_toml());
        return Ok(());
    }
    match cli.command {
        None => {
            eprintln!("nothing to do; see --help");
            std::process::exit(2);
        }
        Some(Command::Run { config, seed, workers, out }) => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = seed {
                cfg.experiment.base_seed = seed;
            }
            if let Some(workers) = workers {
                cfg.experiment.workers = workers;
            }
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.experiment.out_dir));
            let result = run_sweep_to_dir(&cfg, &out_dir)?;
            for a in &result.aggregates {
                println!(
                    "{:>16} budget {:>6}: mean return {:.4}{} over {} episodes",
                    a.algorithm.name(),
                    a.budget,
                    a.mean_return,
                    a.std_error.map_or(String::new(), |s| format!(" ± {s:.4}")),
                    a.episodes,
                );
            }
            println!("wrote results to {}", out_dir.display());
            Ok(())
        }
        Some(Command::MoeVerify { config, out }) => {
            let cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading {}", config.display()))?;
            let outcome = run_moe_verify(&cfg.moe)?;
            print!("{}", outcome.report());
            let out_dir = out.unwrap_or_else(|| PathBuf::from(&cfg.experiment.out_dir));
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join(format!("{}_moe_residuals.csv", cfg.experiment.id));
            std::fs::write(&path, outcome.residual_csv())?;
            println!("wrote residuals to {}", path.display());
            let threshold = (cfg.moe.theorem2_instances * 99).div_ceil(100);
            if !outcome.all_pass(threshold) {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}
