use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use acrl::harness::{compare_report, load_config, run_experiment, speedup};
use acrl::AcrlError;

#[derive(Parser)]
#[command(name = "acrl", version, about = "Reinforcement learning with an actively refreshed reward model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent as described by a JSON configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides the configuration's.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize metrics files (or run directories) into one table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a configuration without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

/// 2 for a diverged run, 1 for every other failure.
fn exit_code(err: &AcrlError) -> u8 {
    match err {
        AcrlError::Divergence(_) => 2,
        _ => 1,
    }
}

fn execute(cli: Cli) -> Result<(), AcrlError> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut cfg = load_config(&config)?;
            if let Some(seed) = seed {
                cfg.seeds.run = seed;
            }
            let dir = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}-{}", cfg.name, cfg.mode.name(), cfg.seeds.run)));
            let outcome = run_experiment(&cfg, Some(&dir))?;
            let last = outcome.rows.last().expect("at least one episode");
            println!(
                "{} episodes, final return {:.6}, oracle queries {}, model queries {}",
                outcome.rows.len(),
                last.episode_return,
                outcome.oracle_queries,
                outcome.model_queries
            );
            if let Ok(s) = speedup(outcome.oracle_queries, outcome.model_queries) {
                println!("speed-up {s:.3}");
            }
            println!("outputs in {}", dir.display());
        }
        Command::Report { inputs, out } => {
            let runs = compare_report(&inputs, &out)?;
            println!("summarized {} runs into {}", runs.len(), out.display());
        }
        Command::Validate { config } => {
            let cfg = load_config(&config)?;
            println!("{}: valid {} configuration", config.display(), cfg.mode.name());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
