//! Per-run manifest: configuration hash, source revision, timestamps, outputs.

use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

use crate::config::RunConfig;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: &'static str,
    pub config_hash: String,
    pub config: RunConfig,
    pub git_describe: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
    pub details: serde_json::Value,
}

fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// `git describe --always --dirty`, or `"unknown"` outside a repository.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}

impl Manifest {
    pub fn new(
        command: &str,
        config: &RunConfig,
        started: DateTime<Utc>,
        outputs: &[PathBuf],
        base: &Path,
        details: serde_json::Value,
    ) -> Self {
        Manifest {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION"),
            config_hash: config.hash(),
            config: config.clone(),
            git_describe: git_describe(),
            started_at: timestamp(started),
            finished_at: timestamp(Utc::now()),
            outputs: outputs
                .iter()
                .map(|p| p.strip_prefix(base).unwrap_or(p).display().to_string())
                .collect(),
            details,
        }
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest-{command}.json")
    }
}
