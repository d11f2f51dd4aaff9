//! Eigensystem cache: one file per magnetization sector, keyed by the model.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use su2_kms::spectral::{
    load_cache, save_cache, DegeneracyPolicy, EigenFamily, EigenSystem, SpectralError,
};
use su2_kms::spin_system::ModelConfig;
use su2_kms::HalfInt;

use crate::config::hex;
use crate::error::{CliError, CliResult, DataContext};

/// Short digest of the model parameters, shared by all sectors of a model.
pub fn model_key(model: &ModelConfig) -> String {
    let digest = Sha256::digest(serde_json::to_vec(model).expect("model serializes"));
    hex(&digest[..8])
}

pub fn cache_path(dir: &Path, model: &ModelConfig, m: HalfInt) -> PathBuf {
    dir.join(format!(
        "eig-N{}-{}-m{}.kmsc",
        model.n_sites,
        model_key(model),
        m.twice()
    ))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DiagSummary {
    pub hits: Vec<HalfInt>,
    pub written: Vec<HalfInt>,
    pub diagonalized: bool,
}

fn try_load(path: &Path, model: &ModelConfig, m: HalfInt) -> Option<EigenSystem> {
    match load_cache(path) {
        Ok(sys) if &sys.config == model && sys.m == m => Some(sys),
        Ok(_) => {
            log::warn!(
                "cache {} belongs to another model; recomputing",
                path.display()
            );
            None
        }
        Err(SpectralError::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => {
            log::warn!("cache {} unusable ({e}); recomputing", path.display());
            None
        }
    }
}

/// Loads the requested sectors, diagonalizing and writing only when some are
/// missing or stale.
pub fn ensure_family(
    model: &ModelConfig,
    dir: &Path,
    sectors: &[HalfInt],
) -> CliResult<(EigenFamily, DiagSummary)> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::data(format!(
            "cannot create cache directory {}: {e}",
            dir.display()
        ))
    })?;
    let mut wanted: Vec<HalfInt> = sectors.to_vec();
    wanted.push(EigenFamily::root_m(model.n_sites));
    wanted.sort();
    wanted.dedup();

    let mut summary = DiagSummary::default();
    let mut loaded = Vec::new();
    for &m in &wanted {
        let path = cache_path(dir, model, m);
        if let Some(sys) = try_load(&path, model, m) {
            log::info!("cache hit: N={} m={m} ({})", model.n_sites, path.display());
            summary.hits.push(m);
            loaded.push(sys);
        }
    }
    if loaded.len() == wanted.len() {
        return Ok((EigenFamily::from_systems(model, loaded).data()?, summary));
    }

    log::info!(
        "diagonalizing N={} for sectors {:?}",
        model.n_sites,
        wanted.iter().map(|m| m.to_string()).collect::<Vec<_>>()
    );
    let family =
        EigenFamily::build(model, &DegeneracyPolicy::for_sites(model.n_sites), &wanted).data()?;
    summary.diagonalized = true;
    for &m in &wanted {
        if summary.hits.contains(&m) {
            continue;
        }
        let path = cache_path(dir, model, m);
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        let sys = family
            .get(m)
            .ok_or_else(|| CliError::data(format!("sector {m} was not produced")))?;
        save_cache(sys, &path).data()?;
        summary.written.push(m);
    }
    Ok((family, summary))
}

/// Loads cached sectors without diagonalizing; missing sectors are an error.
pub fn load_family(model: &ModelConfig, dir: &Path, sectors: &[HalfInt]) -> CliResult<EigenFamily> {
    let mut wanted: Vec<HalfInt> = sectors.to_vec();
    wanted.push(EigenFamily::root_m(model.n_sites));
    wanted.sort();
    wanted.dedup();
    let mut systems = Vec::new();
    for m in wanted {
        let path = cache_path(dir, model, m);
        if !path.exists() {
            return Err(CliError::data(format!(
                "missing cache for N={} m={m} at {}; run `kms diag` first",
                model.n_sites,
                path.display()
            )));
        }
        let sys = load_cache(&path)
            .map_err(|e| CliError::data(format!("cache {}: {e}", path.display())))?;
        log::info!("cache hit: N={} m={m} ({})", model.n_sites, path.display());
        systems.push(sys);
    }
    EigenFamily::from_systems(model, systems).data()
}
