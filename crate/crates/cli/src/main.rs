use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kms_cli::config::{Overrides, RunConfig};
use kms_cli::error::CliError;
use kms_cli::{run, Stage};
use su2_kms::thermo::ThermoParams;

/// Fine-grained KMS diagnostics for SU(2)-symmetric qubit rings.
#[derive(Debug, Parser)]
#[command(name = "kms", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Analyse the modified thermal state with parameters β μ γ.
    #[arg(long, global = true, num_args = 3, value_names = ["BETA", "MU", "GAMMA"], allow_negative_numbers = true)]
    nats: Option<Vec<f64>>,
    /// Number of sites.
    #[arg(long = "n", global = true)]
    n_sites: Option<usize>,
    /// Target spin, given as 2s.
    #[arg(long = "s", global = true, allow_negative_numbers = true)]
    spin_twice: Option<i32>,
    /// Inverse temperature used to select eigenstates.
    #[arg(long, global = true, allow_negative_numbers = true)]
    beta: Option<f64>,
    #[arg(long, global = true, env = "KMS_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Diagonalize and cache the sectors the configuration needs.
    Diag {
        /// Cache every magnetization sector.
        #[arg(long)]
        all_sectors: bool,
    },
    /// Fine-grained correlators of the configured tensors.
    Correlate,
    /// Log-ratio curves, effective inverse temperatures and plots.
    Kms,
    /// Thermodynamic tables of the modified thermal state.
    Thermo,
    /// Re-render plots from log-ratio CSVs in the output directory.
    Plot,
}

fn config(global: &Global) -> Result<RunConfig, CliError> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let nats = global
        .nats
        .as_ref()
        .map(|v| ThermoParams::new(v[0], v[1], v[2]));
    cfg.apply(&Overrides {
        n_sites: global.n_sites,
        spin_twice: global.spin_twice,
        beta: global.beta,
        nats,
        cache_dir: global.cache_dir.clone(),
        output_dir: global.output_dir.clone(),
    });
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let stage = match cli.command {
        Command::Diag { all_sectors } => Stage::Diag { all_sectors },
        Command::Correlate => Stage::Correlate,
        Command::Kms => Stage::Kms,
        Command::Thermo => Stage::Thermo,
        Command::Plot => Stage::Plot,
    };
    match config(&cli.global).and_then(|cfg| run(stage, &cfg)) {
        Ok(manifest) => {
            log::info!(
                "{} finished: {} outputs",
                manifest.command,
                manifest.outputs.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
