use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mcvae_cli::config::{ExperimentConfig, RawConfig};
use mcvae_cli::presets::{preset, preset_names};
use mcvae_cli::{runner, CliError};

/// Train and evaluate VAEs whose encoders are refined by short adaptive
/// MCMC chains.
#[derive(Parser)]
#[command(name = "mcvae", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Path to a config file (`key = value` with [sections]).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the dataset (and the generating model, when synthetic).
    GenerateData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a model and write metrics plus the final checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate an existing checkpoint.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// generate-or-load, train, then evaluate.
    Run {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run a grid over one config key, several seeds per value.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Config key to vary, e.g. `train.kernel`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the axis.
        #[arg(long)]
        values: String,
        /// Seeds per value.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
    },
    /// List available presets.
    Presets,
}

fn load_raw(common: &CommonArgs) -> Result<RawConfig, CliError> {
    let text = match (&common.config, &common.preset) {
        (Some(path), None) => std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?,
        (None, Some(name)) => preset(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown preset `{name}`; available: {}",
                preset_names().join(", ")
            ))
        })?,
        _ => {
            return Err(CliError::Config(
                "exactly one of --config or --preset is required".into(),
            ))
        }
    };
    let mut raw = RawConfig::parse(&text)?;
    if let Some(seed) = common.seed {
        raw.set("train.seed", &seed.to_string());
    }
    Ok(raw)
}

fn resolve_out(common: &CommonArgs, cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| CliError::Config("no output directory: pass --out or set [output] dir".into()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(())
        }
        Command::GenerateData { common } => {
            let raw = load_raw(&common)?;
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let out = resolve_out(&common, &cfg)?;
            runner::generate_data(&cfg, &out)
        }
        Command::Train { common } => {
            let raw = load_raw(&common)?;
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let out = resolve_out(&common, &cfg)?;
            runner::run_training(&cfg, &out)
        }
        Command::Evaluate { common } => {
            let raw = load_raw(&common)?;
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let out = resolve_out(&common, &cfg)?;
            let report = runner::run_evaluation(&cfg, &out)?;
            println!(
                "kappa_raw={} kappa_transformed={} gap_abs={} is_loglik_mean={}",
                report.kappa_raw.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                report
                    .kappa_transformed
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "-".into()),
                report.gap_abs.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                report.is_loglik_mean,
            );
            Ok(())
        }
        Command::Run { common } => {
            let raw = load_raw(&common)?;
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let out = resolve_out(&common, &cfg)?;
            let report = runner::run(&cfg, &out)?;
            println!(
                "kappa_raw={} kappa_transformed={} gap_abs={} is_loglik_mean={}",
                report.kappa_raw.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                report
                    .kappa_transformed
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "-".into()),
                report.gap_abs.map(|v| v.to_string()).unwrap_or_else(|| "-".into()),
                report.is_loglik_mean,
            );
            Ok(())
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
        } => {
            let raw = load_raw(&common)?;
            let cfg = ExperimentConfig::from_raw(&raw)?;
            let out = resolve_out(&common, &cfg)?;
            let values: Vec<String> = values.split(',').map(|s| s.trim().to_string()).collect();
            if values.is_empty() || values.iter().any(String::is_empty) {
                return Err(CliError::Config("--values must be a nonempty list".into()));
            }
            let summary = runner::sweep(&raw, &out, &axis, &values, seeds)?;
            println!("summary written to {}", summary.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Single machine-parsable line on stderr.
            eprintln!("error: kind={} message={:?}", e.kind(), e.to_string());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
