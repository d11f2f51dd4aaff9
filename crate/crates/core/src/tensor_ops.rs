//! Spherical tensor operators as sector-to-sector blocks, ladder
//! commutators between components, and Wigner–Eckart reduced elements.

use std::collections::BTreeMap;

use faer::Mat;
use rayon::prelude::*;
use thiserror::Error;

use crate::spectral::{EigenFamily, EigenSystem};
use crate::spin_system::{
    assemble, build_ladder_between, heisenberg_pair, ModelConfig, OperatorBlock, SectorSet,
    SpinError, SpinSector,
};
use crate::su2::{clebsch_gordan, HalfInt, CG_ZERO_TOL};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error("cannot lower T^({k})_{q}: already the bottom component")]
    BottomComponent { k: HalfInt, q: HalfInt },
    #[error("cannot raise T^({k})_{q}: already the top component")]
    TopComponent { k: HalfInt, q: HalfInt },
    #[error("tensor {label} has no block leaving sector m = {m}")]
    MissingBlock { label: String, m: HalfInt },
    #[error("eigensystem dimensions do not match block {rows}x{cols}")]
    ShapeMismatch { rows: usize, cols: usize },
}

#[derive(Clone, Debug)]
pub struct SphericalTensor {
    pub k: HalfInt,
    pub q: HalfInt,
    pub label: String,
    pub n_sites: usize,
    /// Keyed by source magnetization; each block maps `m → m + q`.
    pub blocks: BTreeMap<HalfInt, OperatorBlock>,
}

impl SphericalTensor {
    pub fn block(&self, source_m: HalfInt) -> Option<&OperatorBlock> {
        self.blocks.get(&source_m)
    }

    pub fn require_block(&self, source_m: HalfInt) -> Result<&OperatorBlock, TensorError> {
        self.block(source_m)
            .ok_or_else(|| TensorError::MissingBlock {
                label: self.label.clone(),
                m: source_m,
            })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        SphericalTensor {
            blocks: self
                .blocks
                .iter()
                .map(|(m, b)| (*m, b.scaled(factor)))
                .collect(),
            label: format!("{factor}*{}", self.label),
            ..self.clone()
        }
    }

    /// Hermitian adjoint: blocks transposed, component `q → -q`.
    pub fn adjoint(&self) -> Self {
        let blocks = self
            .blocks
            .values()
            .map(|b| {
                let block = OperatorBlock {
                    source_m: b.target_m,
                    target_m: b.source_m,
                    matrix: b.matrix.transpose().to_owned(),
                };
                (block.source_m, block)
            })
            .collect();
        SphericalTensor {
            q: -self.q,
            label: format!("{}^dag", self.label),
            blocks,
            ..self.clone()
        }
    }

    /// Largest absolute entry across all blocks.
    pub fn max_abs(&self) -> f64 {
        self.blocks
            .values()
            .map(OperatorBlock::max_abs)
            .fold(0.0, f64::max)
    }
}

fn physical(n_sites: usize, m: HalfInt) -> bool {
    m.abs().twice() <= n_sites as i32 && m.twice().rem_euclid(2) == (n_sites % 2) as i32
}

/// Builds one block per sector pair `(m, m + q)` present in `sectors`.
fn build_blocks<F>(sectors: &SectorSet, q: HalfInt, action: F) -> BTreeMap<HalfInt, OperatorBlock>
where
    F: Fn(u64, &mut Vec<(u64, f64)>) + Sync,
{
    let pairs: Vec<(&SpinSector, &SpinSector)> = sectors
        .iter()
        .filter_map(|s| sectors.get(s.m + q).map(|t| (s, t)))
        .collect();
    pairs
        .into_par_iter()
        .map(|(s, t)| (s.m, assemble(s, t, &action)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn check_sites(config: &ModelConfig, sectors: &SectorSet) -> Result<usize, TensorError> {
    config.validate()?;
    if let Some(s) = sectors.iter().next() {
        if s.n_sites != config.n_sites {
            return Err(SpinError::InvalidConfig(format!(
                "sectors built for N = {}, model has N = {}",
                s.n_sites, config.n_sites
            ))
            .into());
        }
    }
    Ok(config.n_sites)
}

/// `T^(0)_0 = -1/(12N) Σ_j σ⃗_j·σ⃗_{j+1}`.
pub fn build_t00(
    config: &ModelConfig,
    sectors: &SectorSet,
) -> Result<SphericalTensor, TensorError> {
    let n = check_sites(config, sectors)?;
    let scale = -1.0 / (12.0 * n as f64);
    let blocks = build_blocks(sectors, HalfInt::ZERO, |bits, out| {
        for j in 0..n {
            heisenberg_pair(bits, j, (j + 1) % n, scale, out);
        }
    });
    Ok(SphericalTensor {
        k: HalfInt::ZERO,
        q: HalfInt::ZERO,
        label: "T00".into(),
        n_sites: n,
        blocks,
    })
}

/// `T^(2)_0 = 1/(√24 N) Σ_j [σ_z^j σ_z^{j+1} - (σ_+^j σ_-^{j+1} + h.c.)]`.
pub fn build_t20(
    config: &ModelConfig,
    sectors: &SectorSet,
) -> Result<SphericalTensor, TensorError> {
    let n = check_sites(config, sectors)?;
    let scale = 1.0 / (24f64.sqrt() * n as f64);
    let blocks = build_blocks(sectors, HalfInt::ZERO, |bits, out| {
        for j in 0..n {
            let i = (j + 1) % n;
            if (bits >> j & 1) == (bits >> i & 1) {
                out.push((bits, scale));
            } else {
                out.push((bits, -scale));
                out.push((bits ^ (1 << j) ^ (1 << i), -scale));
            }
        }
    });
    Ok(SphericalTensor {
        k: HalfInt::int(2),
        q: HalfInt::ZERO,
        label: "T20".into(),
        n_sites: n,
        blocks,
    })
}

/// `T^(4)_4 = (1/N) Σ_j σ_+^j σ_+^{j+1} σ_+^{j+2} σ_+^{j+3}`.
pub fn build_t44(
    config: &ModelConfig,
    sectors: &SectorSet,
) -> Result<SphericalTensor, TensorError> {
    let n = check_sites(config, sectors)?;
    let scale = 1.0 / n as f64;
    let blocks = build_blocks(sectors, HalfInt::int(4), |bits, out| {
        for j in 0..n {
            let mask = (0..4).fold(0u64, |acc, d| acc | 1 << ((j + d) % n));
            if bits & mask == 0 {
                out.push((bits | mask, scale));
            }
        }
    });
    Ok(SphericalTensor {
        k: HalfInt::int(4),
        q: HalfInt::int(4),
        label: "T44".into(),
        n_sites: n,
        blocks,
    })
}

/// Block of `t` leaving `m`, `None` when `m` or `m + q` is outside the
/// physical range (the block is then identically zero).
fn block_or_zero<'a>(
    t: &'a SphericalTensor,
    sectors: &SectorSet,
    m: HalfInt,
) -> Result<Option<&'a OperatorBlock>, TensorError> {
    if !physical(t.n_sites, m) || !physical(t.n_sites, m + t.q) {
        return Ok(None);
    }
    match t.block(m) {
        Some(b) => Ok(Some(b)),
        None => {
            let missing = if sectors.get(m).is_none() { m } else { m + t.q };
            Err(SpinError::SectorMissing(missing).into())
        }
    }
}

/// `[S_±, T^(k)_q] / √(k(k+1) - q(q±1))`.
fn ladder_commutator(
    t: &SphericalTensor,
    sectors: &SectorSet,
    raise: bool,
) -> Result<SphericalTensor, TensorError> {
    let (k, q) = (t.k.value(), t.q.value());
    let step = if raise { HalfInt::ONE } else { -HalfInt::ONE };
    let norm = if raise {
        k * (k + 1.0) - q * (q + 1.0)
    } else {
        k * (k + 1.0) - q * (q - 1.0)
    };
    if norm <= 0.0 {
        return Err(if raise {
            TensorError::TopComponent { k: t.k, q: t.q }
        } else {
            TensorError::BottomComponent { k: t.k, q: t.q }
        });
    }
    let scale = 1.0 / norm.sqrt();
    let new_q = t.q + step;
    let mut blocks = BTreeMap::new();
    for source in sectors.iter() {
        let m = source.m;
        let Some(target) = sectors.get(m + new_q) else {
            continue;
        };
        let mut acc = Mat::<f64>::zeros(target.dim(), source.dim());
        // S_± T : m → m+q → m+q±1
        if let Some(b) = block_or_zero(t, sectors, m)? {
            let mid = sectors.require(m + t.q)?;
            let ladder = build_ladder_between(mid, target)?;
            acc += &ladder.matrix * &b.matrix;
        }
        // T S_± : m → m±1 → m±1+q
        if physical(t.n_sites, m + step) {
            if let Some(b) = block_or_zero(t, sectors, m + step)? {
                let mid = sectors.require(m + step)?;
                let ladder = build_ladder_between(source, mid)?;
                acc -= &b.matrix * &ladder.matrix;
            }
        }
        let matrix = Mat::from_fn(acc.nrows(), acc.ncols(), |i, j| scale * acc[(i, j)]);
        blocks.insert(
            m,
            OperatorBlock {
                source_m: m,
                target_m: target.m,
                matrix,
            },
        );
    }
    Ok(SphericalTensor {
        k: t.k,
        q: new_q,
        label: t.label.clone(),
        n_sites: t.n_sites,
        blocks,
    })
}

/// Standard-normalized `T^(k)_{q-1}`.
pub fn lower(t: &SphericalTensor, sectors: &SectorSet) -> Result<SphericalTensor, TensorError> {
    ladder_commutator(t, sectors, false)
}

/// Standard-normalized `T^(k)_{q+1}`.
pub fn raise(t: &SphericalTensor, sectors: &SectorSet) -> Result<SphericalTensor, TensorError> {
    ladder_commutator(t, sectors, true)
}

/// Every component `q = -k..=k` reachable from `t` by ladder commutators.
pub fn components(
    t: &SphericalTensor,
    sectors: &SectorSet,
) -> Result<BTreeMap<HalfInt, SphericalTensor>, TensorError> {
    let mut out = BTreeMap::new();
    let mut up = t.clone();
    while up.q < t.k {
        up = raise(&up, sectors)?;
        out.insert(up.q, up.clone());
    }
    let mut down = t.clone();
    while down.q > -t.k {
        down = lower(&down, sectors)?;
        out.insert(down.q, down.clone());
    }
    out.insert(t.q, t.clone());
    Ok(out)
}

/// `⟨α, m+q | T | α', m⟩` for all record pairs: rows index `target`,
/// columns index `source`.
pub fn eigen_elements(
    t: &SphericalTensor,
    source: &EigenSystem,
    target: &EigenSystem,
) -> Result<Mat<f64>, TensorError> {
    let block = t.require_block(source.m)?;
    if block.target_m != target.m
        || block.matrix.nrows() != target.dim()
        || block.matrix.ncols() != source.dim()
    {
        return Err(TensorError::ShapeMismatch {
            rows: block.matrix.nrows(),
            cols: block.matrix.ncols(),
        });
    }
    let vs = source.vectors();
    let vt = target.vectors();
    Ok(vt.transpose() * (&block.matrix * &vs))
}

#[derive(Clone, Debug, Default)]
pub struct ReducedElementTable {
    /// `(target multiplet, source multiplet) → ⟨α‖T‖α'⟩`, taken from the
    /// lowest source `m` at which the pair appears.
    pub entries: BTreeMap<(usize, usize), f64>,
    /// Largest spread of a reduced element across magnetizations.
    pub residual: f64,
    /// Largest element whose Clebsch–Gordan coefficient vanishes.
    pub forbidden_max: f64,
}

/// Divides every eigenstate element by its Clebsch–Gordan coefficient and
/// measures how far the quotient depends on `m`.
pub fn reduced_elements(
    t: &SphericalTensor,
    family: &EigenFamily,
) -> Result<ReducedElementTable, TensorError> {
    let mut table = ReducedElementTable::default();
    let mut spread: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for (&m, block) in &t.blocks {
        let (Some(source), Some(target)) = (family.get(m), family.get(block.target_m)) else {
            continue;
        };
        let elements = eigen_elements(t, source, target)?;
        for (j, rs) in source.records.iter().enumerate() {
            for (i, rt) in target.records.iter().enumerate() {
                let value = elements[(i, j)];
                let cg = clebsch_gordan(rs.spin, m, t.k, t.q, rt.spin, block.target_m);
                if cg.abs() < CG_ZERO_TOL {
                    table.forbidden_max = table.forbidden_max.max(value.abs());
                    continue;
                }
                let reduced = value / cg;
                let key = (rt.multiplet, rs.multiplet);
                table.entries.entry(key).or_insert(reduced);
                let e = spread.entry(key).or_insert((reduced, reduced));
                e.0 = e.0.min(reduced);
                e.1 = e.1.max(reduced);
            }
        }
    }
    table.residual = spread.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    Ok(table)
}
