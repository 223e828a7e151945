//! `fedcrit` command line: single runs, recover-round sweeps and synthetic
//! data generation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedcrit::data::{generate_synthetic, save_dataset};
use fedcrit::harness::{emit_run, emit_sweep, run_experiment, sweep_recover_rounds, ExperimentConfig};
use fedcrit::schedules::SwitchRound;
use fedcrit::Error;

#[derive(Parser)]
#[command(name = "fedcrit", version, about = "Deterministic FedAvg critical-period simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write metrics.csv and run.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the config once per (recover round, seed) and summarise.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated recover rounds; "never" is accepted.
        #[arg(long, value_delimiter = ',', required = true)]
        recover_rounds: Vec<String>,
        /// Comma-separated master seeds.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run sweep points one after another instead of concurrently.
        #[arg(long)]
        sequential: bool,
    },
    /// Write a synthetic Gaussian-mixture dataset as CSV.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        spread: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn execute(command: Command) -> Result<(), Error> {
    match command {
        Command::Run { config, out } => {
            let config = ExperimentConfig::from_file(&config)?;
            let record = run_experiment(&config)?;
            emit_run(&record, &out)?;
            println!(
                "final_accuracy={:.4} rounds_to_target={} final_cum_trace={:.6}",
                record.final_accuracy,
                record
                    .rounds_to_target
                    .map_or_else(|| "not reached".to_string(), |r| r.to_string()),
                record.final_cum_trace
            );
        }
        Command::Sweep {
            config,
            recover_rounds,
            seeds,
            out,
            sequential,
        } => {
            let config = ExperimentConfig::from_file(&config)?;
            let rounds = recover_rounds
                .iter()
                .map(|s| s.parse::<SwitchRound>())
                .collect::<Result<Vec<_>, _>>()?;
            let sweep = sweep_recover_rounds(&config, &rounds, &seeds, !sequential)?;
            emit_sweep(&sweep, &out)?;
            for row in &sweep.summary.rows {
                println!(
                    "M={:>6} acc={:.4}±{:.4} cum_trace={:.6}",
                    row.recover_round.to_string(),
                    row.mean_final_accuracy,
                    row.std_final_accuracy,
                    row.mean_final_cum_trace
                );
            }
        }
        Command::GenData {
            classes,
            dim,
            n,
            spread,
            seed,
            out,
        } => {
            let dataset = generate_synthetic(classes, dim, n, spread, seed)?;
            save_dataset(&dataset, &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
