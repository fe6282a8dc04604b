use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use mivat_cli::report::{render_csv, render_table};
use mivat_cli::run::headline_metric;
use mivat_cli::{cmd_generate, cmd_run, compare, exit_code, ExperimentConfig, RunOptions, VERSION};

#[derive(Parser)]
#[command(name = "mivat", version = VERSION, about = "Semi-supervised MIL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write bag manifests, payloads and a provenance file for a synthetic dataset.
    Generate { config: PathBuf },
    /// Train and evaluate; writes report.json and trials.csv to the run directory.
    Run {
        config: PathBuf,
        /// Worker threads for trials and LOSO splits.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare finished runs: aligned table on stdout, CSV to --csv or after the table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = cmd_generate(&cfg)?;
            println!("wrote {}", dir.display());
        }
        Command::Run { config, workers, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = cmd_run(&cfg, &RunOptions { workers, seed })?;
            println!("{}", report.one_line(headline_metric(&report)));
        }
        Command::Report { dirs, csv } => {
            let rows = compare(&dirs)?;
            print!("{}", render_table(&rows));
            let table = render_csv(&rows)?;
            match csv {
                Some(path) => {
                    std::fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("\n{table}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
