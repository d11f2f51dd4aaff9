//! Command-line pipeline around `su2_kms`: cached diagonalization,
//! correlators, KMS log-ratio analysis, thermodynamic tables and plots.

pub mod cache;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod svg;

use chrono::Utc;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Diag { all_sectors: bool },
    Correlate,
    Kms,
    Thermo,
    Plot,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Diag { .. } => "diag",
            Stage::Correlate => "correlate",
            Stage::Kms => "kms",
            Stage::Thermo => "thermo",
            Stage::Plot => "plot",
        }
    }
}

/// Sizes the global rayon pool; `0` keeps the default.
pub fn configure_parallelism(threads: usize) {
    if threads > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

/// Runs one stage and writes its manifest into the output directory.
pub fn run(stage: Stage, config: &RunConfig) -> CliResult<Manifest> {
    config.validate()?;
    configure_parallelism(config.parallelism);
    let started = Utc::now();
    let outcome = match stage {
        Stage::Diag { all_sectors } => commands::diag(config, all_sectors)?,
        Stage::Correlate => commands::correlate(config)?,
        Stage::Kms => commands::kms(config)?,
        Stage::Thermo => commands::thermo(config)?,
        Stage::Plot => commands::plot(config)?,
    };
    let dir = &config.output_dir;
    let manifest = Manifest::new(
        stage.name(),
        config,
        started,
        &outcome.outputs,
        dir,
        outcome.details,
    );
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::data(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    let path = dir.join(Manifest::file_name(stage.name()));
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    Ok(manifest)
}
