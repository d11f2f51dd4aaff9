//! Fixed-magnetization bases of an `N`-qubit ring and matrix builders for the
//! Hamiltonian and the global spin operators.
//!
//! Basis states are bit-strings with site 1 in the least significant bit; a
//! set bit is an up spin. Within a sector the states are ascending as
//! unsigned integers.

use std::collections::BTreeMap;

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::su2::HalfInt;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("magnetization {m} is not allowed for {n_sites} sites")]
    InvalidMagnetization { n_sites: usize, m: HalfInt },
    #[error("sector m = {0} does not exist")]
    SectorMissing(HalfInt),
}

/// Largest ring the bit-string representation supports.
pub const MAX_SITES: usize = 63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_sites: usize,
    #[serde(default = "default_coupling")]
    pub coupling_j: f64,
    #[serde(default = "default_lambda")]
    pub lambda_mix: f64,
    /// Reserved for translation-symmetry projection; must stay `false`.
    #[serde(default)]
    pub momentum_projection: bool,
}

fn default_coupling() -> f64 {
    1.0
}

fn default_lambda() -> f64 {
    0.25
}

impl ModelConfig {
    pub fn new(n_sites: usize, coupling_j: f64, lambda_mix: f64) -> Result<Self, SpinError> {
        let config = ModelConfig {
            n_sites,
            coupling_j,
            lambda_mix,
            momentum_projection: false,
        };
        config.validate()?;
        Ok(config)
    }

    /// `J = 1`, `λ = 1/4`: the non-integrable point.
    pub fn chaotic(n_sites: usize) -> Result<Self, SpinError> {
        Self::new(n_sites, 1.0, 0.25)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        // next-nearest bonds double-count below 6 sites unless their weight is zero
        let min_sites = if self.lambda_mix == 1.0 { 3 } else { 6 };
        if self.n_sites < min_sites {
            return Err(SpinError::InvalidConfig(format!(
                "n_sites = {} but at least {min_sites} sites are needed for distinct bonds",
                self.n_sites
            )));
        }
        if self.n_sites > MAX_SITES {
            return Err(SpinError::InvalidConfig(format!(
                "n_sites = {} exceeds {MAX_SITES}",
                self.n_sites
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_mix) {
            return Err(SpinError::InvalidConfig(format!(
                "lambda_mix = {} outside [0, 1]",
                self.lambda_mix
            )));
        }
        if !self.coupling_j.is_finite() {
            return Err(SpinError::InvalidConfig("coupling_j must be finite".into()));
        }
        if self.momentum_projection {
            return Err(SpinError::InvalidConfig(
                "momentum projection is not implemented".into(),
            ));
        }
        Ok(())
    }
}

/// All magnetizations `-N/2, ..., N/2` of an `N`-site ring.
pub fn magnetizations(n_sites: usize) -> impl DoubleEndedIterator<Item = HalfInt> {
    HalfInt::from_twice(n_sites as i32).projections()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpinSector {
    pub n_sites: usize,
    pub m: HalfInt,
    states: Vec<u64>,
}

impl SpinSector {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[u64] {
        &self.states
    }

    pub fn index_of(&self, bits: u64) -> Option<usize> {
        self.states.binary_search(&bits).ok()
    }

    pub fn n_up(&self) -> usize {
        ((self.n_sites as i32 + self.m.twice()) / 2) as usize
    }
}

pub fn build_sector(n_sites: usize, m: HalfInt) -> Result<SpinSector, SpinError> {
    let twice_n = n_sites as i32;
    if n_sites > MAX_SITES || m.twice().abs() > twice_n || (twice_n + m.twice()) % 2 != 0 {
        return Err(SpinError::InvalidMagnetization { n_sites, m });
    }
    let n_up = ((twice_n + m.twice()) / 2) as u32;
    let mut states = Vec::new();
    if n_up == 0 {
        states.push(0);
    } else {
        // Gosper's hack: next integer with the same popcount.
        let limit = 1u64 << n_sites;
        let mut v: u64 = (1u64 << n_up) - 1;
        while v < limit {
            states.push(v);
            let c = v & v.wrapping_neg();
            let r = v + c;
            v = (((r ^ v) >> 2) / c) | r;
        }
    }
    Ok(SpinSector { n_sites, m, states })
}

/// A collection of sectors of one ring, keyed by magnetization.
#[derive(Clone, Debug)]
pub struct SectorSet {
    pub n_sites: usize,
    sectors: BTreeMap<HalfInt, SpinSector>,
}

impl SectorSet {
    pub fn full(n_sites: usize) -> Result<Self, SpinError> {
        Self::with(n_sites, magnetizations(n_sites))
    }

    pub fn with(n_sites: usize, ms: impl IntoIterator<Item = HalfInt>) -> Result<Self, SpinError> {
        let mut sectors = BTreeMap::new();
        for m in ms {
            sectors.insert(m, build_sector(n_sites, m)?);
        }
        Ok(SectorSet { n_sites, sectors })
    }

    pub fn get(&self, m: HalfInt) -> Option<&SpinSector> {
        self.sectors.get(&m)
    }

    pub fn require(&self, m: HalfInt) -> Result<&SpinSector, SpinError> {
        self.get(m).ok_or(SpinError::SectorMissing(m))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SpinSector> {
        self.sectors.values()
    }

    pub fn magnetizations(&self) -> impl Iterator<Item = HalfInt> + '_ {
        self.sectors.keys().copied()
    }
}

/// Dense matrix of an operator restricted to `source_m → target_m`.
#[derive(Clone, Debug)]
pub struct OperatorBlock {
    pub source_m: HalfInt,
    pub target_m: HalfInt,
    pub matrix: Mat<f64>,
}

impl OperatorBlock {
    pub fn zeros(source: &SpinSector, target: &SpinSector) -> Self {
        OperatorBlock {
            source_m: source.m,
            target_m: target.m,
            matrix: Mat::zeros(target.dim(), source.dim()),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        let mut max = 0.0f64;
        for j in 0..self.matrix.ncols() {
            for i in 0..self.matrix.nrows() {
                max = max.max(self.matrix[(i, j)].abs());
            }
        }
        max
    }

    pub fn scaled(&self, factor: f64) -> Self {
        OperatorBlock {
            source_m: self.source_m,
            target_m: self.target_m,
            matrix: Mat::from_fn(self.matrix.nrows(), self.matrix.ncols(), |i, j| {
                factor * self.matrix[(i, j)]
            }),
        }
    }
}

/// Builds a block by letting `action` emit `(target_bits, amplitude)` pairs
/// for each source basis state.
pub(crate) fn assemble<F>(source: &SpinSector, target: &SpinSector, action: F) -> OperatorBlock
where
    F: Fn(u64, &mut Vec<(u64, f64)>),
{
    let mut block = OperatorBlock::zeros(source, target);
    let mut out = Vec::new();
    for (col, &bits) in source.states().iter().enumerate() {
        out.clear();
        action(bits, &mut out);
        for &(t, amp) in &out {
            let row = target
                .index_of(t)
                .unwrap_or_else(|| panic!("operator maps {bits:b} outside sector {}", target.m));
            block.matrix[(row, col)] += amp;
        }
    }
    block
}

#[inline]
fn bit(bits: u64, site: usize) -> bool {
    bits >> site & 1 == 1
}

/// `σ⃗_i · σ⃗_j` acting on a basis state.
#[inline]
pub(crate) fn heisenberg_pair(
    bits: u64,
    i: usize,
    j: usize,
    scale: f64,
    out: &mut Vec<(u64, f64)>,
) {
    if bit(bits, i) == bit(bits, j) {
        out.push((bits, scale));
    } else {
        out.push((bits, -scale));
        out.push((bits ^ (1 << i) ^ (1 << j), 2.0 * scale));
    }
}

/// `H = -(J/2) Σ_j [λ σ⃗_j·σ⃗_{j+1} + (1-λ) σ⃗_j·σ⃗_{j+2}]` on a periodic ring.
pub fn build_hamiltonian(config: &ModelConfig, sector: &SpinSector) -> OperatorBlock {
    assert_eq!(
        config.n_sites, sector.n_sites,
        "sector built for a different ring"
    );
    let n = config.n_sites;
    let nn = -0.5 * config.coupling_j * config.lambda_mix;
    let nnn = -0.5 * config.coupling_j * (1.0 - config.lambda_mix);
    assemble(sector, sector, |bits, out| {
        for j in 0..n {
            heisenberg_pair(bits, j, (j + 1) % n, nn, out);
            heisenberg_pair(bits, j, (j + 2) % n, nnn, out);
        }
    })
}

pub fn build_sz(sector: &SpinSector) -> OperatorBlock {
    let half_n = sector.n_sites as f64 / 2.0;
    assemble(sector, sector, |bits, out| {
        out.push((bits, bits.count_ones() as f64 - half_n))
    })
}

/// `S⃗² = 3N/4 + ½ Σ_{i<j} σ⃗_i·σ⃗_j`.
pub fn build_s2(sector: &SpinSector) -> OperatorBlock {
    let n = sector.n_sites;
    assemble(sector, sector, |bits, out| {
        out.push((bits, 0.75 * n as f64));
        for i in 0..n {
            for j in i + 1..n {
                heisenberg_pair(bits, i, j, 0.5, out);
            }
        }
    })
}

fn ladder_block(source: &SpinSector, target: &SpinSector, raise: bool) -> OperatorBlock {
    let n = source.n_sites;
    assemble(source, target, |bits, out| {
        for j in 0..n {
            if bit(bits, j) != raise {
                out.push((bits ^ (1 << j), 1.0));
            }
        }
    })
}

/// Total raising operator `S_+ = Σ_j σ_+^(j)`, mapping `m → m + 1`.
pub fn build_s_plus(source: &SpinSector) -> Result<OperatorBlock, SpinError> {
    let target = build_sector(source.n_sites, source.m + HalfInt::ONE)
        .map_err(|_| SpinError::SectorMissing(source.m + HalfInt::ONE))?;
    Ok(ladder_block(source, &target, true))
}

/// Total lowering operator `S_- = Σ_j σ_-^(j)`, mapping `m → m - 1`.
pub fn build_s_minus(source: &SpinSector) -> Result<OperatorBlock, SpinError> {
    let target = build_sector(source.n_sites, source.m - HalfInt::ONE)
        .map_err(|_| SpinError::SectorMissing(source.m - HalfInt::ONE))?;
    Ok(ladder_block(source, &target, false))
}

/// `S_±` between two already-built sectors; `target.m` selects the direction.
pub fn build_ladder_between(
    source: &SpinSector,
    target: &SpinSector,
) -> Result<OperatorBlock, SpinError> {
    if target.m == source.m + HalfInt::ONE {
        Ok(ladder_block(source, target, true))
    } else if target.m == source.m - HalfInt::ONE {
        Ok(ladder_block(source, target, false))
    } else {
        Err(SpinError::SectorMissing(target.m))
    }
}

/// Applies `S_+` (`raise`) or `S_-` to a coefficient vector without forming
/// the matrix.
pub fn apply_ladder(source: &SpinSector, target: &SpinSector, v: &[f64], raise: bool) -> Vec<f64> {
    assert_eq!(v.len(), source.dim());
    let mut out = vec![0.0; target.dim()];
    for (&bits, &c) in source.states().iter().zip(v) {
        if c == 0.0 {
            continue;
        }
        for j in 0..source.n_sites {
            if bit(bits, j) != raise {
                let idx = target
                    .index_of(bits ^ (1 << j))
                    .expect("ladder target outside sector");
                out[idx] += c;
            }
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Full `2^N` Pauli-product construction used to cross-check the sector builders.

    use faer::Mat;

    pub fn kron(a: &Mat<f64>, b: &Mat<f64>) -> Mat<f64> {
        let (ra, ca, rb, cb) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
        Mat::from_fn(ra * rb, ca * cb, |i, j| {
            a[(i / rb, j / cb)] * b[(i % rb, j % cb)]
        })
    }

    /// Single-site operators in the basis (|0> = down, |1> = up).
    pub fn local(name: &str) -> Mat<f64> {
        let v = match name {
            "z" => [[-1.0, 0.0], [0.0, 1.0]],
            "+" => [[0.0, 0.0], [1.0, 0.0]],
            "-" => [[0.0, 1.0], [0.0, 0.0]],
            "x" => [[0.0, 1.0], [1.0, 0.0]],
            "1" => [[1.0, 0.0], [0.0, 1.0]],
            _ => panic!("unknown local operator {name}"),
        };
        Mat::from_fn(2, 2, |i, j| v[i][j])
    }

    /// Product of single-site operators placed on the given sites; site 0 is
    /// the least significant bit.
    pub fn site_product(n: usize, ops: &[(usize, &str)]) -> Mat<f64> {
        let mut acc = Mat::from_fn(1, 1, |_, _| 1.0);
        for site in (0..n).rev() {
            let mut local_op = local("1");
            for &(s, name) in ops {
                if s == site {
                    local_op = &local(name) * &local_op;
                }
            }
            acc = kron(&acc, &local_op);
        }
        acc
    }

    /// `σ⃗_i·σ⃗_j = σ_zσ_z + 2(σ_+σ_- + σ_-σ_+)`.
    pub fn heisenberg(n: usize, i: usize, j: usize) -> Mat<f64> {
        let zz = site_product(n, &[(i, "z"), (j, "z")]);
        let pm = site_product(n, &[(i, "+"), (j, "-")]);
        let mp = site_product(n, &[(i, "-"), (j, "+")]);
        Mat::from_fn(zz.nrows(), zz.ncols(), |a, b| {
            zz[(a, b)] + 2.0 * (pm[(a, b)] + mp[(a, b)])
        })
    }

    pub fn add_scaled(acc: &mut Mat<f64>, term: &Mat<f64>, scale: f64) {
        for j in 0..acc.ncols() {
            for i in 0..acc.nrows() {
                acc[(i, j)] += scale * term[(i, j)];
            }
        }
    }

    pub fn hamiltonian(n: usize, j: f64, lambda: f64) -> Mat<f64> {
        let mut h = Mat::zeros(1 << n, 1 << n);
        for site in 0..n {
            add_scaled(
                &mut h,
                &heisenberg(n, site, (site + 1) % n),
                -0.5 * j * lambda,
            );
            add_scaled(
                &mut h,
                &heisenberg(n, site, (site + 2) % n),
                -0.5 * j * (1.0 - lambda),
            );
        }
        h
    }

    /// Restriction of a full-space operator to `rows × cols` basis states.
    pub fn restrict(op: &Mat<f64>, rows: &[u64], cols: &[u64]) -> Mat<f64> {
        Mat::from_fn(rows.len(), cols.len(), |i, j| {
            op[(rows[i] as usize, cols[j] as usize)]
        })
    }
}
