//! Run configuration: a single JSON file, with command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use su2_kms::correlators::ThermoParams;
use su2_kms::spin_system::ModelConfig;
use su2_kms::HalfInt;

use crate::error::CliError;

pub const CACHE_DIR_ENV: &str = "KMS_CACHE_DIR";
pub const DEFAULT_CACHE_DIR: &str = "kms-cache";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorBuilder {
    T00,
    T20,
    /// `T^(4)_0`, obtained by lowering `T^(4)_4` four times.
    T40,
}

impl TensorBuilder {
    pub fn rank(self) -> u32 {
        match self {
            TensorBuilder::T00 => 0,
            TensorBuilder::T20 => 2,
            TensorBuilder::T40 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub k: u32,
    pub builder: TensorBuilder,
}

fn default_model() -> ModelConfig {
    ModelConfig::chaotic(12).expect("12 sites is a valid ring")
}

fn default_spins() -> Vec<HalfInt> {
    vec![HalfInt::ZERO]
}

fn default_tensors() -> Vec<TensorSpec> {
    vec![TensorSpec {
        k: 0,
        builder: TensorBuilder::T00,
    }]
}

fn default_bin_width() -> f64 {
    0.2
}

fn default_window() -> f64 {
    0.4
}

fn default_range() -> [f64; 2] {
    [2.0, 5.0]
}

fn default_output() -> PathBuf {
    PathBuf::from("kms-out")
}

/// Spins are written as twice their value, like every `HalfInt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_spins")]
    pub spin_targets: Vec<HalfInt>,
    #[serde(default = "default_tensors")]
    pub tensors: Vec<TensorSpec>,
    #[serde(default = "default_bin_width")]
    pub bin_width: f64,
    #[serde(default = "default_window")]
    pub energy_window: f64,
    #[serde(default = "default_range")]
    pub omega_range: [f64; 2],
    /// Falls back to `KMS_CACHE_DIR`, then to `kms-cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub parallelism: usize,
    /// Modified thermal state `(β, μ, γ)`; eigenstate mode when absent.
    #[serde(default)]
    pub nats: Option<ThermoParams>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Command-line values that replace fields of the file configuration.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub n_sites: Option<usize>,
    pub spin_twice: Option<i32>,
    pub beta: Option<f64>,
    pub nats: Option<ThermoParams>,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text)
            .map_err(|e| CliError::config(format!("invalid configuration: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(n) = o.n_sites {
            self.model.n_sites = n;
        }
        if let Some(t) = o.spin_twice {
            self.spin_targets = vec![HalfInt::from_twice(t)];
        }
        if let Some(b) = o.beta {
            self.beta = b;
        }
        if let Some(p) = o.nats {
            self.nats = Some(p);
        }
        if let Some(d) = &o.cache_dir {
            self.cache_dir = Some(d.clone());
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        let n = self.model.n_sites as i32;
        if !self.beta.is_finite() {
            return Err(CliError::config("beta must be finite"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(CliError::config(format!(
                "bin_width = {} must be positive",
                self.bin_width
            )));
        }
        if !(self.energy_window > 0.0 && self.energy_window.is_finite()) {
            return Err(CliError::config(format!(
                "energy_window = {} must be positive",
                self.energy_window
            )));
        }
        if !(self.omega_range[0] < self.omega_range[1]) {
            return Err(CliError::config(format!(
                "omega_range {:?} must be increasing",
                self.omega_range
            )));
        }
        if self.spin_targets.is_empty() {
            return Err(CliError::config("spin_targets is empty"));
        }
        for s in &self.spin_targets {
            if s.twice() < 0 || s.twice() > n || (s.twice() - n) % 2 != 0 {
                return Err(CliError::config(format!(
                    "spin {s} is not reachable with {n} sites"
                )));
            }
        }
        if self.tensors.is_empty() {
            return Err(CliError::config("tensors is empty"));
        }
        for t in &self.tensors {
            if t.k != t.builder.rank() {
                return Err(CliError::config(format!(
                    "tensor {:?} has rank {}, not {}",
                    t.builder,
                    t.builder.rank(),
                    t.k
                )));
            }
        }
        if let Some(p) = &self.nats {
            if !p.is_finite() {
                return Err(CliError::config("nats parameters must be finite"));
            }
        }
        Ok(())
    }

    /// Cache directory after applying the environment fallback.
    pub fn resolved_cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }

    /// `sha256:` digest of the serialized configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(serde_json::to_vec(self).expect("configuration serializes"));
        format!("sha256:{}", hex(&digest))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_parameters() {
        let c = RunConfig::default();
        assert_eq!(c.model.lambda_mix, 0.25);
        assert_eq!(c.energy_window, 0.4);
        assert_eq!(c.omega_range, [2.0, 5.0]);
        assert_eq!(c.bin_width, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_fields_are_config_errors() {
        let mut c = RunConfig::default();
        c.omega_range = [5.0, 2.0];
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
        let mut c = RunConfig::default();
        c.spin_targets = vec![HalfInt::HALF];
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.tensors = vec![TensorSpec {
            k: 2,
            builder: TensorBuilder::T00,
        }];
        assert!(c.validate().is_err());
        assert!(RunConfig::from_json("{\"unknown\": 1}").is_err());
    }

    #[test]
    fn overrides_replace_fields() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            n_sites: Some(10),
            spin_twice: Some(4),
            beta: Some(0.5),
            ..Default::default()
        });
        assert_eq!(c.model.n_sites, 10);
        assert_eq!(c.spin_targets, vec![HalfInt::int(2)]);
        assert_eq!(c.beta, 0.5);
    }
}
