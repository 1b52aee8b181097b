//! Experiment runner CLI: `fedsim run <config.json>` executes one protocol
//! and writes metrics.csv / ledger.csv / summary.json (plus privacy.json or
//! blocks.jsonl where the protocol produces them); `fedsim sweep` repeats a
//! run over a list of values for one dotted config key.

use clap::{Parser, Subcommand};
use fedsim::config::ExperimentConfig;
use fedsim::error::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated learning protocol simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the config once per value of a dotted config key.
    Sweep {
        config: PathBuf,
        /// Dotted key, e.g. fedavg.tau or multfaug.hops.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn error_kind(code: i32) -> &'static str {
    match code {
        2 => "config",
        3 => "partition",
        4 => "budget",
        _ => "runtime",
    }
}

fn fail(err: Error) -> ExitCode {
    let code = err.exit_code();
    let payload = serde_json::json!({
        "error": error_kind(code),
        "message": err.to_string(),
    });
    eprintln!("{payload}");
    ExitCode::from(code as u8)
}

fn run_command(
    config_path: &Path,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let mut config = ExperimentConfig::from_path(config_path)?;
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    let out = output_dir
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let artifacts = fedsim::runner::run_to_dir(&config, &out)?;
    println!(
        "{} rounds={} final_acc={:.4} uplink_bits={} -> {}",
        artifacts.summary.protocol,
        artifacts.summary.rounds_completed,
        artifacts.summary.final_test_acc,
        artifacts.summary.cum_uplink_bits,
        out.display()
    );
    Ok(())
}

fn sweep_command(
    config_path: &Path,
    param: &str,
    values: &[String],
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(), Error> {
    let text = std::fs::read_to_string(config_path)?;
    let mut base: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(seed) = seed {
        base["master_seed"] = serde_json::Value::from(seed);
    }
    let parsed: ExperimentConfig =
        serde_json::from_value(base.clone()).map_err(|e| Error::Config(e.to_string()))?;
    parsed.validate()?;
    let out = output_dir
        .or_else(|| parsed.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let results = fedsim::runner::sweep_to_dir(&base, param, values, &out)?;
    for (value, summary) in &results {
        println!(
            "{param}={value}: rounds={} final_acc={:.4}",
            summary.rounds_completed, summary.final_test_acc
        );
    }
    println!("comparison -> {}", out.join("comparison.csv").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            config,
            output_dir,
            seed,
        } => run_command(config, output_dir.clone(), *seed),
        Command::Sweep {
            config,
            param,
            values,
            output_dir,
            seed,
        } => sweep_command(config, param, values, output_dir.clone(), *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => fail(err),
    }
}
