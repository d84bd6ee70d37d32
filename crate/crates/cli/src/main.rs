use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ttdensity_cli::{inspect, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ttdensity", version, about = "Layered tensor-train density surrogates")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "TTDENSITY_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV tables plus a manifest.
    Run {
        config: PathBuf,
        /// Override the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration without running it.
    Validate { config: PathBuf },
    /// Summarize a saved surrogate.
    Inspect { surrogate: PathBuf },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
    }
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let output = ttdensity_cli::run(&cfg)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
            let manifest = output.write(&dir)?;
            for t in &output.tables {
                println!("{} ({} rows)", dir.join(&t.name).display(), t.rows);
            }
            println!("{}", manifest.display());
        }
        Command::Validate { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let scenario = serde_json::to_value(cfg.scenario)?;
            println!("ok {} {}", scenario.as_str().unwrap_or_default(), cfg.hash());
        }
        Command::Inspect { surrogate } => {
            print!("{}", inspect(&surrogate)?);
        }
    }
    Ok(())
}
