//! Sector diagonalization with sharp total-spin labels, eigenstate selection
//! at a target inverse temperature, and the binary eigensystem cache.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use faer::{Mat, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::CompensatedSum;
use crate::spin_system::{
    apply_ladder, build_hamiltonian, build_s2, build_sector, ModelConfig, SpinError,
};
use crate::su2::HalfInt;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("record {index} (E = {energy}) has <S^2> = {s2}, not within tolerance of any s(s+1)")]
    SpinLabelFailure { index: usize, energy: f64, s2: f64 },
    #[error("no eigenstates with spin {0}")]
    EmptySpinSubspace(HalfInt),
    #[error("cache I/O: {0}")]
    Io(#[from] io::Error),
    #[error("cache checksum mismatch: header {expected}, payload {found}")]
    ChecksumMismatch { expected: String, found: String },
    #[error("cache format version {found}, expected {CACHE_VERSION}")]
    VersionMismatch { found: u32 },
    #[error("corrupt cache: {0}")]
    Corrupt(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenRecord {
    pub energy: f64,
    pub spin: HalfInt,
    pub m: HalfInt,
    /// Position of this multiplet in the ladder root sector; for a standalone
    /// sector diagonalization it is the record's own index.
    pub multiplet: usize,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenSystem {
    pub config: ModelConfig,
    pub m: HalfInt,
    pub records: Vec<EigenRecord>,
    /// `Some(root)` when the vectors were generated by ladder operators from
    /// the `root` sector, so that phases across sectors follow the
    /// Condon–Shortley convention and `multiplet` labels are shared.
    pub ladder_root: Option<HalfInt>,
}

impl EigenSystem {
    /// Dimension of the underlying sector basis.
    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.vector.len())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy).collect()
    }

    /// Eigenvectors as the columns of a `dim × len` matrix.
    pub fn vectors(&self) -> Mat<f64> {
        Mat::from_fn(self.dim(), self.len(), |i, j| self.records[j].vector[i])
    }

    pub fn indices_with_spin(&self, s: HalfInt) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].spin == s)
            .collect()
    }

    /// Index of the record belonging to `multiplet`, if present.
    pub fn find_multiplet(&self, multiplet: usize) -> Option<usize> {
        self.records.iter().position(|r| r.multiplet == multiplet)
    }

    /// Number of records per spin value.
    pub fn spin_counts(&self) -> BTreeMap<HalfInt, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.spin).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyPolicy {
    pub energy_tol: f64,
    pub spin_round_tol: f64,
}

impl DegeneracyPolicy {
    pub fn for_sites(n_sites: usize) -> Self {
        DegeneracyPolicy {
            energy_tol: 1e-9 * n_sites as f64,
            spin_round_tol: 1e-4,
        }
    }
}

/// Nearest admissible spin for an `<S²>` value, or `None` if it misses every
/// `s(s+1)` by more than `tol` in `s`.
fn spin_from_casimir(s2: f64, m: HalfInt, tol: f64) -> Option<HalfInt> {
    let s = ((4.0 * s2.max(0.0) + 1.0).sqrt() - 1.0) / 2.0;
    let twice = (2.0 * s).round() as i32;
    let spin = HalfInt::from_twice(twice);
    if (s - spin.value()).abs() > tol || !spin.same_parity(m) || spin < m.abs() {
        return None;
    }
    Some(spin)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Full dense diagonalization of one magnetization sector. Degenerate energy
/// groups are rotated so that every record is an `S²` eigenvector.
pub fn diagonalize(
    config: &ModelConfig,
    m: HalfInt,
    policy: &DegeneracyPolicy,
) -> Result<EigenSystem, SpectralError> {
    config.validate()?;
    let sector = build_sector(config.n_sites, m)?;
    let h = build_hamiltonian(config, &sector);
    let eig = h
        .matrix
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| SpectralError::Eigen(format!("{e:?}")))?;
    let energies: Vec<f64> = {
        let s = eig.S().column_vector();
        (0..s.nrows()).map(|i| s[i]).collect()
    };
    let mut u = eig.U().to_owned();
    let s2 = build_s2(&sector).matrix;
    let dim = sector.dim();

    let mut start = 0;
    while start < dim {
        let mut end = start + 1;
        while end < dim && energies[end] - energies[end - 1] <= policy.energy_tol {
            end += 1;
        }
        if end - start > 1 {
            let block = u.subcols(start, end - start).to_owned();
            let projected = block.transpose() * (&s2 * &block);
            let sym = Mat::from_fn(projected.nrows(), projected.ncols(), |i, j| {
                0.5 * (projected[(i, j)] + projected[(j, i)])
            });
            let rot = sym
                .self_adjoint_eigen(Side::Lower)
                .map_err(|e| SpectralError::Eigen(format!("{e:?}")))?;
            let rotated = &block * rot.U();
            u.subcols_mut(start, end - start).copy_from(&rotated);
        }
        start = end;
    }

    let s2u = &s2 * &u;
    let mut records = Vec::with_capacity(dim);
    for (index, &energy) in energies.iter().enumerate() {
        let mut vector: Vec<f64> = (0..dim).map(|i| u[(i, index)]).collect();
        // deterministic sign: largest component positive
        let pivot = vector
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, &x)| {
                if x.abs() > best.1 + 1e-12 {
                    (i, x.abs())
                } else {
                    best
                }
            })
            .0;
        let sign = vector[pivot].signum();
        let s2_column: Vec<f64> = (0..dim).map(|i| sign * s2u[(i, index)]).collect();
        vector.iter_mut().for_each(|x| *x *= sign);
        let casimir = dot(&vector, &s2_column);
        let spin = spin_from_casimir(casimir, m, policy.spin_round_tol).ok_or(
            SpectralError::SpinLabelFailure {
                index,
                energy,
                s2: casimir,
            },
        )?;
        records.push(EigenRecord {
            energy,
            spin,
            m,
            multiplet: index,
            vector,
        });
    }
    Ok(EigenSystem {
        config: config.clone(),
        m,
        records,
        ladder_root: None,
    })
}

/// Eigensystems of several sectors whose vectors are related by the total
/// ladder operators, so multiplet partners share a label and phase
/// convention across `m`.
#[derive(Clone, Debug)]
pub struct EigenFamily {
    pub config: ModelConfig,
    systems: BTreeMap<HalfInt, EigenSystem>,
}

impl EigenFamily {
    /// Sector holding every multiplet exactly once: `m = 0` or `m = 1/2`.
    pub fn root_m(n_sites: usize) -> HalfInt {
        HalfInt::from_twice((n_sites % 2) as i32)
    }

    /// Diagonalizes the root sector and derives the requested sectors from it.
    pub fn build(
        config: &ModelConfig,
        policy: &DegeneracyPolicy,
        sectors: &[HalfInt],
    ) -> Result<Self, SpectralError> {
        let root_m = Self::root_m(config.n_sites);
        let mut root = diagonalize(config, root_m, policy)?;
        root.ladder_root = Some(root_m);
        let mut systems = BTreeMap::new();
        let top = sectors.iter().copied().max().unwrap_or(root_m).max(root_m);
        let bottom = sectors.iter().copied().min().unwrap_or(root_m).min(root_m);
        for m in sectors {
            build_sector(config.n_sites, *m)?;
        }

        let mut current = root.clone();
        let mut m = root_m;
        while m < top {
            current = ladder_step(&current, true)?;
            m = current.m;
            if sectors.contains(&m) {
                systems.insert(m, current.clone());
            }
        }
        let mut current = root.clone();
        let mut m = root_m;
        while m > bottom {
            current = ladder_step(&current, false)?;
            m = current.m;
            if sectors.contains(&m) {
                systems.insert(m, current.clone());
            }
        }
        systems.insert(root_m, root);
        Ok(EigenFamily {
            config: config.clone(),
            systems,
        })
    }

    /// All `N + 1` sectors.
    pub fn all(config: &ModelConfig, policy: &DegeneracyPolicy) -> Result<Self, SpectralError> {
        let ms: Vec<HalfInt> = crate::spin_system::magnetizations(config.n_sites).collect();
        Self::build(config, policy, &ms)
    }

    /// Reassembles a family from cached systems; all must share the root.
    pub fn from_systems(
        config: &ModelConfig,
        systems: impl IntoIterator<Item = EigenSystem>,
    ) -> Result<Self, SpectralError> {
        let root_m = Self::root_m(config.n_sites);
        let mut map = BTreeMap::new();
        for sys in systems {
            if sys.ladder_root != Some(root_m) || &sys.config != config {
                return Err(SpectralError::Corrupt(format!(
                    "sector {} is not ladder-aligned with this model",
                    sys.m
                )));
            }
            map.insert(sys.m, sys);
        }
        if !map.contains_key(&root_m) {
            return Err(SpectralError::Corrupt(
                "family is missing its root sector".into(),
            ));
        }
        Ok(EigenFamily {
            config: config.clone(),
            systems: map,
        })
    }

    pub fn root(&self) -> &EigenSystem {
        &self.systems[&Self::root_m(self.config.n_sites)]
    }

    pub fn get(&self, m: HalfInt) -> Option<&EigenSystem> {
        self.systems.get(&m)
    }

    pub fn systems(&self) -> impl Iterator<Item = &EigenSystem> {
        self.systems.values()
    }

    pub fn magnetizations(&self) -> impl Iterator<Item = HalfInt> + '_ {
        self.systems.keys().copied()
    }

    pub fn into_systems(self) -> BTreeMap<HalfInt, EigenSystem> {
        self.systems
    }
}

/// Moves every multiplet of `system` one step up (or down) in `m`.
fn ladder_step(system: &EigenSystem, raise: bool) -> Result<EigenSystem, SpectralError> {
    let n = system.config.n_sites;
    let step = if raise { HalfInt::ONE } else { -HalfInt::ONE };
    let source = build_sector(n, system.m)?;
    let target_m = system.m + step;
    let target = build_sector(n, target_m)?;
    let m = system.m.value();
    let records: Vec<EigenRecord> = system
        .records
        .par_iter()
        .filter(|r| r.spin >= target_m.abs())
        .map(|r| {
            let s = r.spin.value();
            let norm = if raise {
                s * (s + 1.0) - m * (m + 1.0)
            } else {
                s * (s + 1.0) - m * (m - 1.0)
            };
            let scale = 1.0 / norm.sqrt();
            let vector = apply_ladder(&source, &target, &r.vector, raise)
                .into_iter()
                .map(|x| x * scale)
                .collect();
            EigenRecord {
                energy: r.energy,
                spin: r.spin,
                m: target_m,
                multiplet: r.multiplet,
                vector,
            }
        })
        .collect();
    Ok(EigenSystem {
        config: system.config.clone(),
        m: target_m,
        records,
        ladder_root: system.ladder_root,
    })
}

/// Boltzmann-weighted mean energy of the spin-`s` records.
pub fn thermal_energy(system: &EigenSystem, s: HalfInt, beta: f64) -> Result<f64, SpectralError> {
    let energies: Vec<f64> = system
        .records
        .iter()
        .filter(|r| r.spin == s)
        .map(|r| r.energy)
        .collect();
    if energies.is_empty() {
        return Err(SpectralError::EmptySpinSubspace(s));
    }
    let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
    let mut num = CompensatedSum::default();
    let mut den = CompensatedSum::default();
    for e in &energies {
        let w = (-beta * (e - e_min)).exp();
        num.add(w * (e - e_min));
        den.add(w);
    }
    Ok(e_min + num.value() / den.value())
}

/// Spin-`s` record whose energy is closest to the thermal energy at `beta`;
/// ties go to the lower energy.
pub fn select_eigenstate(
    system: &EigenSystem,
    s: HalfInt,
    beta: f64,
) -> Result<usize, SpectralError> {
    let target = thermal_energy(system, s, beta)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in system.records.iter().enumerate() {
        if r.spin != s {
            continue;
        }
        let d = (r.energy - target).abs();
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i)
        .ok_or(SpectralError::EmptySpinSubspace(s))
}

/// Spin-`s` records with `|E - E(β)| ≤ window / 2`.
pub fn eigenstate_window(system: &EigenSystem, s: HalfInt, beta: f64, window: f64) -> Vec<usize> {
    let Ok(target) = thermal_energy(system, s, beta) else {
        return Vec::new();
    };
    system
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.spin == s && (r.energy - target).abs() <= window / 2.0)
        .map(|(i, _)| i)
        .collect()
}

// ---------------------------------------------------------------------------
// cache

pub const CACHE_MAGIC: &[u8; 4] = b"KMS1";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CacheHeader {
    config: ModelConfig,
    m_twice: i32,
    dim: usize,
    count: usize,
    ladder_root_twice: Option<i32>,
    layout: Vec<String>,
    checksum: String,
}

fn layout() -> Vec<String> {
    [
        "energies:f64",
        "spins_twice:i32",
        "multiplet:u32",
        "vectors:f64",
    ]
    .into_iter()
    .map(String::from)
    .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(7 + 64);
    out.push_str("sha256:");
    for b in digest.iter() {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn encode(system: &EigenSystem) -> Result<Vec<u8>, SpectralError> {
    let dim = system.dim();
    let count = system.len();
    let mut payload = Vec::with_capacity(count * (8 + 4 + 4 + 8 * dim));
    for r in &system.records {
        payload.extend_from_slice(&r.energy.to_le_bytes());
    }
    for r in &system.records {
        payload.extend_from_slice(&r.spin.twice().to_le_bytes());
    }
    for r in &system.records {
        let id = u32::try_from(r.multiplet)
            .map_err(|_| SpectralError::Corrupt("multiplet id overflow".into()))?;
        payload.extend_from_slice(&id.to_le_bytes());
    }
    for r in &system.records {
        if r.vector.len() != dim {
            return Err(SpectralError::Corrupt("ragged eigenvectors".into()));
        }
        for x in &r.vector {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = CacheHeader {
        config: system.config.clone(),
        m_twice: system.m.twice(),
        dim,
        count,
        ladder_root_twice: system.ladder_root.map(HalfInt::twice),
        layout: layout(),
        checksum: sha256_hex(&payload),
    };
    let json = serde_json::to_vec(&header).map_err(|e| SpectralError::Corrupt(e.to_string()))?;
    let mut out = Vec::with_capacity(16 + json.len() + payload.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<EigenSystem, SpectralError> {
    let corrupt = |what: &str| SpectralError::Corrupt(what.to_string());
    if bytes.len() < 16 || &bytes[..4] != CACHE_MAGIC {
        return Err(corrupt("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(SpectralError::VersionMismatch { found: version });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| corrupt("truncated header"))?;
    let header: CacheHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| SpectralError::Corrupt(e.to_string()))?;
    if header.layout != layout() {
        return Err(corrupt("unknown array layout"));
    }
    let payload = &bytes[header_end..];
    let (dim, count) = (header.dim, header.count);
    let expected_len = count
        .checked_mul(8 + 4 + 4)
        .and_then(|a| {
            count
                .checked_mul(dim)
                .and_then(|b| b.checked_mul(8))
                .and_then(|b| a.checked_add(b))
        })
        .ok_or_else(|| corrupt("size overflow"))?;
    if payload.len() != expected_len {
        return Err(corrupt(&format!(
            "payload has {} bytes, expected {expected_len}",
            payload.len()
        )));
    }
    let found = sha256_hex(payload);
    if found != header.checksum {
        return Err(SpectralError::ChecksumMismatch {
            expected: header.checksum,
            found,
        });
    }

    let (energies, rest) = payload.split_at(8 * count);
    let (spins, rest) = rest.split_at(4 * count);
    let (multiplets, vectors) = rest.split_at(4 * count);
    let m = HalfInt::from_twice(header.m_twice);
    let records = (0..count)
        .map(|i| EigenRecord {
            energy: f64::from_le_bytes(energies[8 * i..8 * i + 8].try_into().unwrap()),
            spin: HalfInt::from_twice(i32::from_le_bytes(
                spins[4 * i..4 * i + 4].try_into().unwrap(),
            )),
            m,
            multiplet: u32::from_le_bytes(multiplets[4 * i..4 * i + 4].try_into().unwrap())
                as usize,
            vector: vectors[8 * dim * i..8 * dim * (i + 1)]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        })
        .collect();
    Ok(EigenSystem {
        config: header.config,
        m,
        records,
        ladder_root: header.ladder_root_twice.map(HalfInt::from_twice),
    })
}

/// Writes `system` to `path`. The file is staged under a temporary name and
/// linked into place, so an existing cache is never overwritten
/// (`ErrorKind::AlreadyExists`).
pub fn save_cache(system: &EigenSystem, path: &Path) -> Result<(), SpectralError> {
    let bytes = encode(system)?;
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut f = OpenOptions::new().write(true).create_new(true).open(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    let linked = fs::hard_link(&tmp, path);
    let _ = fs::remove_file(&tmp);
    linked?;
    Ok(())
}

pub fn load_cache(path: &Path) -> Result<EigenSystem, SpectralError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
