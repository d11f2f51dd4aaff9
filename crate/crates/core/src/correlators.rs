//! Fine-grained correlators in energy eigenstates and in the modified
//! non-Abelian thermal state, binned in frequency and resolved by the
//! magnetization and spin transfers, plus the log-ratio diagnostics built
//! from them.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spectral::{eigenstate_window, EigenFamily, EigenSystem};
use crate::su2::{m3_shift, HalfInt, Su2Error};
use crate::tensor_ops::{eigen_elements, SphericalTensor, TensorError};
use crate::thermo::{ln_nats_partition, multiplet_levels, ThermoError};

pub use crate::thermo::ThermoParams;

/// Default analysis range for `β_eff` and related averages.
pub const DEFAULT_OMEGA_RANGE: (f64, f64) = (2.0, 5.0);
/// Relative magnitude below which a bin is treated as empty in a log-ratio.
pub const UNDEFINED_BIN_EPS: f64 = 1e-12;
/// Absolute bin magnitude below which a bin is treated as rounding noise.
pub const ABSOLUTE_BIN_FLOOR: f64 = 1e-18;

#[derive(Debug, Error)]
pub enum CorrelatorError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Su2(#[from] Su2Error),
    #[error("eigenstate index {index} out of range for {len} records")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("operator components do not pair: A has q = {a}, B has q = {b}")]
    ComponentMismatch { a: HalfInt, b: HalfInt },
    #[error("sectors {0} and {1} are not ladder-aligned eigensystems")]
    NotLadderAligned(HalfInt, HalfInt),
    #[error("missing eigensystem for m = {0}")]
    MissingSector(HalfInt),
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
    #[error("no eigenstates with spin {s} within the energy window")]
    EmptyWindow { s: HalfInt },
    #[error("no defined bins with centers in [{lo}, {hi}]")]
    NoBinsInRange { lo: f64, hi: f64 },
    #[error("curves use different frequency grids")]
    GridMismatch,
}

/// One `(α, m)` state, identified across sectors by its multiplet label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateRef {
    pub m: HalfInt,
    pub multiplet: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub dm: HalfInt,
    pub ds: HalfInt,
    pub weight: f64,
    /// `None` for the disconnected subtraction term.
    pub source: Option<StateRef>,
    pub target: Option<StateRef>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeakList {
    pub peaks: Vec<Peak>,
}

impl PeakList {
    pub fn total_weight(&self) -> f64 {
        self.peaks.iter().map(|p| p.weight).sum()
    }
}

/// `a[(i, j)] = ⟨i, m|A|j, m'⟩` and `b[(j, i)] = ⟨j, m'|B|i, m⟩` for the
/// records of a source sector `m` and target sector `m' = m + q`.
#[derive(Clone, Debug)]
pub struct TransitionElements {
    pub source_m: HalfInt,
    pub target_m: HalfInt,
    pub a: Mat<f64>,
    pub b: Mat<f64>,
    /// Smaller of the two ranks; larger spin transfers vanish.
    pub k_min: HalfInt,
}

impl TransitionElements {
    pub fn new(
        a: &SphericalTensor,
        b: &SphericalTensor,
        source: &EigenSystem,
        target: &EigenSystem,
    ) -> Result<Self, CorrelatorError> {
        if a.q != -b.q || target.m != source.m + b.q {
            return Err(CorrelatorError::ComponentMismatch { a: a.q, b: b.q });
        }
        if source.m != target.m
            && (source.ladder_root.is_none() || source.ladder_root != target.ladder_root)
        {
            return Err(CorrelatorError::NotLadderAligned(source.m, target.m));
        }
        // each product is formed from the same two element matrices whichever
        // of A and B comes first, so KMS partners share their rounding
        let b_el = eigen_elements(b, source, target)?;
        let a_el = eigen_elements(a, target, source)?;
        Ok(TransitionElements {
            source_m: source.m,
            target_m: target.m,
            a: a_el,
            b: b_el,
            k_min: a.k.min(b.k),
        })
    }

    fn q(&self) -> HalfInt {
        self.target_m - self.source_m
    }
}

/// Index in `target` of the partner of `alpha` (same multiplet), if any.
fn partner(source: &EigenSystem, target: &EigenSystem, alpha: usize) -> Option<usize> {
    if source.m == target.m {
        Some(alpha)
    } else {
        target.find_multiplet(source.records[alpha].multiplet)
    }
}

/// Dynamical peaks of `C_AB` in eigenstate `alpha` of `source`.
pub fn eigen_peaks_with(
    el: &TransitionElements,
    source: &EigenSystem,
    target: &EigenSystem,
    alpha: usize,
) -> Result<PeakList, CorrelatorError> {
    if alpha >= source.len() {
        return Err(CorrelatorError::IndexOutOfRange {
            index: alpha,
            len: source.len(),
        });
    }
    let skip = partner(source, target, alpha);
    let r = &source.records[alpha];
    let q = el.q();
    let max_ds = el.k_min;
    let peaks = target
        .records
        .iter()
        .enumerate()
        .filter(|(j, rt)| Some(*j) != skip && (rt.spin - r.spin).abs() <= max_ds)
        .map(|(j, rt)| Peak {
            omega: rt.energy - r.energy,
            dm: q,
            ds: rt.spin - r.spin,
            weight: 2.0 * PI * el.a[(alpha, j)] * el.b[(j, alpha)],
            source: Some(StateRef {
                m: source.m,
                multiplet: r.multiplet,
            }),
            target: Some(StateRef {
                m: target.m,
                multiplet: rt.multiplet,
            }),
        })
        .collect();
    Ok(PeakList { peaks })
}

pub fn eigen_peaks(
    a: &SphericalTensor,
    b: &SphericalTensor,
    source: &EigenSystem,
    target: &EigenSystem,
    alpha: usize,
) -> Result<PeakList, CorrelatorError> {
    let el = TransitionElements::new(a, b, source, target)?;
    eigen_peaks_with(&el, source, target, alpha)
}

/// `2π(⟨α,m|A|α,m+q⟩⟨α,m+q|B|α,m⟩ - ⟨α,m|A|α,m⟩⟨α,m|B|α,m⟩)`.
pub fn static_correlator_with(
    el: &TransitionElements,
    source: &EigenSystem,
    target: &EigenSystem,
    alpha: usize,
) -> Result<f64, CorrelatorError> {
    if alpha >= source.len() {
        return Err(CorrelatorError::IndexOutOfRange {
            index: alpha,
            len: source.len(),
        });
    }
    // for q = 0 both terms are the same product
    if el.source_m == el.target_m {
        return Ok(0.0);
    }
    Ok(match partner(source, target, alpha) {
        Some(j) => 2.0 * PI * el.a[(alpha, j)] * el.b[(j, alpha)],
        None => 0.0,
    })
}

pub fn static_correlator(
    a: &SphericalTensor,
    b: &SphericalTensor,
    source: &EigenSystem,
    target: &EigenSystem,
    alpha: usize,
) -> Result<f64, CorrelatorError> {
    let el = TransitionElements::new(a, b, source, target)?;
    static_correlator_with(&el, source, target, alpha)
}

/// Connected fine-grained peaks of `C_AB` in the modified thermal state,
/// summed over every `(α, m) → (α', m + q)` transition of a full family.
pub fn nats_peaks(
    a: &SphericalTensor,
    b: &SphericalTensor,
    family: &EigenFamily,
    params: &ThermoParams,
) -> Result<PeakList, CorrelatorError> {
    if a.q != -b.q {
        return Err(CorrelatorError::ComponentMismatch { a: a.q, b: b.q });
    }
    let levels = multiplet_levels(family.root())?;
    let ln_z = ln_nats_partition(&levels, params)?;
    let q = b.q;
    let mut peaks = Vec::new();
    let mut mean_a = 0.0;
    let mut mean_b = 0.0;
    for source in family.systems() {
        let Some(target) = family.get(source.m + q) else {
            continue;
        };
        if b.block(source.m).is_none() {
            continue;
        }
        let el = TransitionElements::new(a, b, source, target)?;
        for (i, r) in source.records.iter().enumerate() {
            let ln_p = -params.beta
                * (r.energy - params.mu * source.m.value() - params.gamma * r.spin.value())
                - ln_z;
            let p = ln_p.exp();
            if q == HalfInt::ZERO {
                mean_a += p * el.a[(i, i)];
                mean_b += p * el.b[(i, i)];
            }
            for (j, rt) in target.records.iter().enumerate() {
                if (rt.spin - r.spin).abs() > el.k_min {
                    continue;
                }
                peaks.push(Peak {
                    omega: rt.energy - r.energy,
                    dm: q,
                    ds: rt.spin - r.spin,
                    weight: 2.0 * PI * p * el.a[(i, j)] * el.b[(j, i)],
                    source: Some(StateRef {
                        m: source.m,
                        multiplet: r.multiplet,
                    }),
                    target: Some(StateRef {
                        m: target.m,
                        multiplet: rt.multiplet,
                    }),
                });
            }
        }
    }
    if q == HalfInt::ZERO {
        peaks.push(Peak {
            omega: 0.0,
            dm: HalfInt::ZERO,
            ds: HalfInt::ZERO,
            weight: -2.0 * PI * mean_a * mean_b,
            source: None,
            target: None,
        });
    }
    Ok(PeakList { peaks })
}

/// Bin index of a frequency; the grid is mirror-symmetric, bin `n` ↔ `-1-n`.
pub fn bin_index(omega: f64, bin_width: f64) -> i64 {
    if omega >= 0.0 {
        (omega / bin_width).floor() as i64
    } else {
        -1 - (-omega / bin_width).floor() as i64
    }
}

pub fn bin_center(n: i64, bin_width: f64) -> f64 {
    (n as f64 + 0.5) * bin_width
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    /// Accumulated weight divided by the bin width.
    pub value: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Origin {
    Eigenstate {
        m: HalfInt,
        index: usize,
        multiplet: usize,
        energy: f64,
        spin: HalfInt,
    },
    Nats(ThermoParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FineGrainedCorrelator {
    pub bin_width: f64,
    /// `(Δm, Δs) → bin index → bin`.
    pub bins: BTreeMap<(HalfInt, HalfInt), BTreeMap<i64, Bin>>,
    pub origin: Option<Origin>,
}

impl FineGrainedCorrelator {
    /// Un-resolved correlator: fine bins summed over `(Δm, Δs)` in key order.
    pub fn coarse(&self) -> BTreeMap<i64, f64> {
        let mut out: BTreeMap<i64, f64> = BTreeMap::new();
        for slice in self.bins.values() {
            for (n, bin) in slice {
                *out.entry(*n).or_insert(0.0) += bin.value;
            }
        }
        out
    }

    pub fn value(&self, dm: HalfInt, ds: HalfInt, n: i64) -> f64 {
        self.bins
            .get(&(dm, ds))
            .and_then(|s| s.get(&n))
            .map_or(0.0, |b| b.value)
    }

    pub fn max_abs(&self) -> f64 {
        self.bins
            .values()
            .flat_map(|s| s.values())
            .map(|b| b.value.abs())
            .fold(0.0, f64::max)
    }

    /// CSV with columns `omega_center, dm, ds, value, std, count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_center,dm,ds,value,std,count\n");
        for ((dm, ds), slice) in &self.bins {
            for (n, bin) in slice {
                let _ = writeln!(
                    out,
                    "{},{},{},{},0,{}",
                    bin_center(*n, self.bin_width),
                    dm.value(),
                    ds.value(),
                    bin.value,
                    bin.count
                );
            }
        }
        out
    }
}

/// Histogram of peak weights, divided by the bin width.
pub fn bin_peaks(
    peaks: &PeakList,
    bin_width: f64,
) -> Result<FineGrainedCorrelator, CorrelatorError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(CorrelatorError::InvalidBinWidth(bin_width));
    }
    let mut sums: BTreeMap<(HalfInt, HalfInt), BTreeMap<i64, (f64, usize)>> = BTreeMap::new();
    for p in &peaks.peaks {
        let e = sums
            .entry((p.dm, p.ds))
            .or_default()
            .entry(bin_index(p.omega, bin_width))
            .or_insert((0.0, 0));
        e.0 += p.weight;
        e.1 += 1;
    }
    let bins = sums
        .into_iter()
        .map(|(key, slice)| {
            let slice = slice
                .into_iter()
                .map(|(n, (w, c))| {
                    (
                        n,
                        Bin {
                            value: w / bin_width,
                            count: c,
                        },
                    )
                })
                .collect();
            (key, slice)
        })
        .collect();
    Ok(FineGrainedCorrelator {
        bin_width,
        bins,
        origin: None,
    })
}

/// Coarse histogram accumulated directly, ignoring `(Δm, Δs)`.
pub fn bin_peaks_coarse(
    peaks: &PeakList,
    bin_width: f64,
) -> Result<BTreeMap<i64, f64>, CorrelatorError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(CorrelatorError::InvalidBinWidth(bin_width));
    }
    let mut sums: BTreeMap<i64, f64> = BTreeMap::new();
    for p in &peaks.peaks {
        *sums.entry(bin_index(p.omega, bin_width)).or_insert(0.0) += p.weight;
    }
    Ok(sums.into_iter().map(|(n, w)| (n, w / bin_width)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRatioCurve {
    pub bin_width: f64,
    pub bins: Vec<i64>,
    pub omegas: Vec<f64>,
    /// `NaN` where no state gives a defined value.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub counts: Vec<usize>,
    pub k: HalfInt,
    pub q: HalfInt,
    pub ds: HalfInt,
    pub s: Option<HalfInt>,
    pub beta: f64,
}

impl LogRatioCurve {
    /// `(Ω, L̄)` for defined bins with centers inside `range`.
    pub fn defined_in(&self, range: (f64, f64)) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        (0..self.bins.len())
            .filter(move |&i| {
                self.counts[i] > 0 && self.omegas[i] >= range.0 && self.omegas[i] <= range.1
            })
            .map(move |i| (i, self.omegas[i], self.mean[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("omega_center,dm,ds,value,std,count\n");
        for i in 0..self.bins.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.omegas[i],
                self.q.value(),
                self.ds.value(),
                self.mean[i],
                self.std[i],
                self.counts[i]
            );
        }
        out
    }

    /// Metadata for the JSON sidecar of `to_csv`.
    pub fn metadata(&self) -> serde_json::Value {
        serde_json::json!({
            "k": self.k.value(),
            "q": self.q.value(),
            "ds": self.ds.value(),
            "s": self.s.map(HalfInt::value),
            "beta": self.beta,
            "bin_width": self.bin_width,
            "columns": ["omega_center", "dm", "ds", "value", "std", "count"],
        })
    }
}

/// `L(Ω) = ln[C_AB(Ω, Δm, Δs) / C_BA(-Ω, -Δm, -Δs)]` per bin.
pub fn log_ratio(
    ab: &FineGrainedCorrelator,
    ba: &FineGrainedCorrelator,
    dm: HalfInt,
    ds: HalfInt,
) -> Result<Vec<(i64, Option<f64>)>, CorrelatorError> {
    if ab.bin_width != ba.bin_width {
        return Err(CorrelatorError::GridMismatch);
    }
    let floor_ab = (UNDEFINED_BIN_EPS * ab.max_abs()).max(ABSOLUTE_BIN_FLOOR);
    let floor_ba = (UNDEFINED_BIN_EPS * ba.max_abs()).max(ABSOLUTE_BIN_FLOOR);
    let mut indices: Vec<i64> = ab
        .bins
        .get(&(dm, ds))
        .map(|s| s.keys().copied().collect())
        .unwrap_or_default();
    if let Some(s) = ba.bins.get(&(-dm, -ds)) {
        indices.extend(s.keys().map(|n| -1 - n));
    }
    indices.sort_unstable();
    indices.dedup();
    Ok(indices
        .into_iter()
        .map(|n| {
            let x = ab.value(dm, ds, n);
            let y = ba.value(-dm, -ds, -1 - n);
            let defined =
                x.abs() >= floor_ab && y.abs() >= floor_ba && x != 0.0 && y != 0.0 && x / y > 0.0;
            (n, defined.then(|| (x / y).ln()))
        })
        .collect())
}

/// Per-bin mean and population standard deviation of several log-ratios.
pub fn merge_log_ratios(
    samples: &[Vec<(i64, Option<f64>)>],
    bin_width: f64,
    k: HalfInt,
    q: HalfInt,
    ds: HalfInt,
    s: Option<HalfInt>,
    beta: f64,
) -> LogRatioCurve {
    let mut per_bin: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for sample in samples {
        for (n, v) in sample {
            let entry = per_bin.entry(*n).or_default();
            if let Some(v) = v {
                entry.push(*v);
            }
        }
    }
    let mut curve = LogRatioCurve {
        bin_width,
        bins: Vec::new(),
        omegas: Vec::new(),
        mean: Vec::new(),
        std: Vec::new(),
        counts: Vec::new(),
        k,
        q,
        ds,
        s,
        beta,
    };
    for (n, values) in per_bin {
        let count = values.len();
        let (mean, std) = if count == 0 {
            (f64::NAN, f64::NAN)
        } else {
            let mean = values.iter().sum::<f64>() / count as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
            (mean, var.sqrt())
        };
        curve.bins.push(n);
        curve.omegas.push(bin_center(n, bin_width));
        curve.mean.push(mean);
        curve.std.push(std);
        curve.counts.push(count);
    }
    curve
}

/// Everything needed to evaluate the log-ratio of eigenstates in one sector.
pub struct EigenLogRatio<'a> {
    pub family: &'a EigenFamily,
    pub m: HalfInt,
    /// `A = A^(k')_{-q}`.
    pub a: &'a SphericalTensor,
    /// `B = B^(k)_q`.
    pub b: &'a SphericalTensor,
    pub bin_width: f64,
}

impl EigenLogRatio<'_> {
    fn systems(&self) -> Result<(&EigenSystem, &EigenSystem, &EigenSystem), CorrelatorError> {
        let get = |m: HalfInt| self.family.get(m).ok_or(CorrelatorError::MissingSector(m));
        Ok((
            get(self.m)?,
            get(self.m + self.b.q)?,
            get(self.m - self.b.q)?,
        ))
    }

    /// Log-ratio of each listed eigenstate of sector `m`.
    pub fn per_state(
        &self,
        indices: &[usize],
        ds: HalfInt,
    ) -> Result<Vec<Vec<(i64, Option<f64>)>>, CorrelatorError> {
        let (home, up, down) = self.systems()?;
        let ab_el = TransitionElements::new(self.a, self.b, home, up)?;
        let ba_el = TransitionElements::new(self.b, self.a, home, down)?;
        let q = self.b.q;
        indices
            .par_iter()
            .map(|&alpha| {
                let ab = bin_peaks(&eigen_peaks_with(&ab_el, home, up, alpha)?, self.bin_width)?;
                let ba = bin_peaks(
                    &eigen_peaks_with(&ba_el, home, down, alpha)?,
                    self.bin_width,
                )?;
                log_ratio(&ab, &ba, q, ds)
            })
            .collect()
    }

    /// Mean and spread of the log-ratio over the eigenstates of spin `s`
    /// within `window` of the thermal energy at `beta`.
    pub fn ensemble(
        &self,
        s: HalfInt,
        beta: f64,
        window: f64,
        ds: HalfInt,
    ) -> Result<LogRatioCurve, CorrelatorError> {
        let (home, _, _) = self.systems()?;
        let indices = eigenstate_window(home, s, beta, window);
        if indices.is_empty() {
            return Err(CorrelatorError::EmptyWindow { s });
        }
        let samples = self.per_state(&indices, ds)?;
        Ok(merge_log_ratios(
            &samples,
            self.bin_width,
            self.b.k,
            self.b.q,
            ds,
            Some(s),
            beta,
        ))
    }
}

/// Ensemble log-ratio of `C_AB` over the spin-`s` eigenstates of sector `m`
/// near the thermal energy at `beta`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_log_ratio(
    a: &SphericalTensor,
    b: &SphericalTensor,
    family: &EigenFamily,
    m: HalfInt,
    s: HalfInt,
    beta: f64,
    window: f64,
    bin_width: f64,
    ds: HalfInt,
) -> Result<LogRatioCurve, CorrelatorError> {
    EigenLogRatio {
        family,
        m,
        a,
        b,
        bin_width,
    }
    .ensemble(s, beta, window, ds)
}

/// Log-ratio curve of the modified thermal state.
pub fn nats_log_ratio(
    a: &SphericalTensor,
    b: &SphericalTensor,
    family: &EigenFamily,
    params: &ThermoParams,
    bin_width: f64,
    ds: HalfInt,
) -> Result<LogRatioCurve, CorrelatorError> {
    let mut ab = bin_peaks(&nats_peaks(a, b, family, params)?, bin_width)?;
    let mut ba = bin_peaks(&nats_peaks(b, a, family, params)?, bin_width)?;
    ab.origin = Some(Origin::Nats(*params));
    ba.origin = Some(Origin::Nats(*params));
    let sample = log_ratio(&ab, &ba, b.q, ds)?;
    Ok(merge_log_ratios(
        &[sample],
        bin_width,
        b.k,
        b.q,
        ds,
        None,
        params.beta,
    ))
}

/// Mean of `L̄/Ω` over defined bins with centers in `range`.
pub fn beta_eff(curve: &LogRatioCurve, range: (f64, f64)) -> Result<f64, CorrelatorError> {
    let vals: Vec<f64> = curve.defined_in(range).map(|(_, w, l)| l / w).collect();
    if vals.is_empty() {
        return Err(CorrelatorError::NoBinsInRange {
            lo: range.0,
            hi: range.1,
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Root-mean-square of `L̄/Ω - β` over the same bins as [`beta_eff`].
pub fn delta_beta(
    curve: &LogRatioCurve,
    beta: f64,
    range: (f64, f64),
) -> Result<f64, CorrelatorError> {
    let vals: Vec<f64> = curve
        .defined_in(range)
        .map(|(_, w, l)| (l / w - beta).powi(2))
        .collect();
    if vals.is_empty() {
        return Err(CorrelatorError::NoBinsInRange {
            lo: range.0,
            hi: range.1,
        });
    }
    Ok((vals.iter().sum::<f64>() / vals.len() as f64).sqrt())
}

/// Average per-bin standard deviation over defined bins in `range`.
pub fn mean_std(curve: &LogRatioCurve, range: (f64, f64)) -> Result<f64, CorrelatorError> {
    let vals: Vec<f64> = curve
        .defined_in(range)
        .map(|(i, _, _)| curve.std[i])
        .collect();
    if vals.is_empty() {
        return Err(CorrelatorError::NoBinsInRange {
            lo: range.0,
            hi: range.1,
        });
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `(βγ)_eff(Ω) = [L̄(Ω, Δs=-2) - L̄(Ω, Δs=+2)] / 4` on bins defined in both.
pub fn beta_gamma_eff(
    curve_minus: &LogRatioCurve,
    curve_plus: &LogRatioCurve,
) -> Result<Vec<(f64, f64)>, CorrelatorError> {
    if curve_minus.bin_width != curve_plus.bin_width {
        return Err(CorrelatorError::GridMismatch);
    }
    let plus: BTreeMap<i64, (f64, usize)> = curve_plus
        .bins
        .iter()
        .enumerate()
        .map(|(i, n)| (*n, (curve_plus.mean[i], curve_plus.counts[i])))
        .collect();
    Ok(curve_minus
        .bins
        .iter()
        .enumerate()
        .filter(|(i, _)| curve_minus.counts[*i] > 0)
        .filter_map(|(i, n)| {
            let &(lp, cp) = plus.get(n)?;
            (cp > 0).then(|| (curve_minus.omegas[i], (curve_minus.mean[i] - lp) / 4.0))
        })
        .collect())
}

/// Root-mean-square of `(βγ)_eff - βγ_ref` over bins with centers in `range`.
pub fn delta_beta_gamma(
    curve_minus: &LogRatioCurve,
    curve_plus: &LogRatioCurve,
    beta_gamma_ref: f64,
    range: (f64, f64),
) -> Result<f64, CorrelatorError> {
    let vals: Vec<f64> = beta_gamma_eff(curve_minus, curve_plus)?
        .into_iter()
        .filter(|(w, _)| *w >= range.0 && *w <= range.1)
        .map(|(_, v)| (v - beta_gamma_ref).powi(2))
        .collect();
    if vals.is_empty() {
        return Err(CorrelatorError::NoBinsInRange {
            lo: range.0,
            hi: range.1,
        });
    }
    Ok((vals.iter().sum::<f64>() / vals.len() as f64).sqrt())
}

/// Shifts a `(q = 0, m = 0)` curve by `M3(s, Δs, m; k, k', q)`, giving the
/// curve expected at `(m, q)`.
#[allow(clippy::too_many_arguments)]
pub fn transport_log_ratio(
    curve: &LogRatioCurve,
    s: HalfInt,
    ds: HalfInt,
    m: HalfInt,
    k: HalfInt,
    kp: HalfInt,
    q: HalfInt,
) -> Result<LogRatioCurve, CorrelatorError> {
    let shift = m3_shift(s, ds, m, k, kp, q)?;
    let mut out = curve.clone();
    out.mean.iter_mut().for_each(|v| *v += shift);
    out.q = q;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::DegeneracyPolicy;
    use crate::spin_system::{ModelConfig, SectorSet};
    use crate::tensor_ops::{build_t00, build_t20, components};

    struct Setup {
        family: EigenFamily,
        t00: SphericalTensor,
        t2: BTreeMap<HalfInt, SphericalTensor>,
    }

    fn setup(n: usize) -> Setup {
        let config = ModelConfig::chaotic(n).unwrap();
        let sectors = SectorSet::full(n).unwrap();
        let family = EigenFamily::all(&config, &DegeneracyPolicy::for_sites(n)).unwrap();
        let t00 = build_t00(&config, &sectors).unwrap();
        let t20 = build_t20(&config, &sectors).unwrap();
        let t2 = components(&t20, &sectors).unwrap();
        Setup { family, t00, t2 }
    }

    fn dense_expectation(op: &Mat<f64>, bra: &[f64], ket: &[f64]) -> f64 {
        (0..bra.len())
            .map(|i| bra[i] * (0..ket.len()).map(|j| op[(i, j)] * ket[j]).sum::<f64>())
            .sum()
    }

    #[test]
    fn eigen_peaks_sum_rule_against_dense_products() {
        let st = setup(8);
        let z = HalfInt::ZERO;
        let home = st.family.get(z).unwrap();
        for (a, b) in [(&st.t00, &st.t00), (&st.t2[&z], &st.t2[&z])] {
            for alpha in [0, 17, 40] {
                let peaks = eigen_peaks(a, b, home, home, alpha).unwrap();
                assert!(peaks.peaks.iter().all(|p| p.dm == z && p.ds.abs() <= b.k));
                let ab = &a.blocks[&z].matrix * &b.blocks[&z].matrix;
                let v = &home.records[alpha].vector;
                let ea = dense_expectation(&a.blocks[&z].matrix, v, v);
                let eb = dense_expectation(&b.blocks[&z].matrix, v, v);
                let expect = 2.0 * PI * (dense_expectation(&ab, v, v) - ea * eb);
                let stat = static_correlator(a, b, home, home, alpha).unwrap();
                assert_eq!(stat, 0.0);
                assert!((peaks.total_weight() + stat - expect).abs() < 1e-12);
                // Hermitian pair: non-negative weights
                assert!(peaks.peaks.iter().all(|p| p.weight >= -1e-12));
            }
        }
    }

    #[test]
    fn static_term_for_nonzero_component() {
        let st = setup(8);
        let (one, z) = (HalfInt::ONE, HalfInt::ZERO);
        let (a, b) = (&st.t2[&-one], &st.t2[&one]);
        let home = st.family.get(z).unwrap();
        let up = st.family.get(one).unwrap();
        let mut nonzero = 0;
        for (alpha, r) in home.records.iter().enumerate() {
            let stat = static_correlator(a, b, home, up, alpha).unwrap();
            let peaks = eigen_peaks(a, b, home, up, alpha).unwrap();
            assert!(peaks.peaks.iter().all(|p| p.dm == one));
            let ab = &a.blocks[&one].matrix * &b.blocks[&z].matrix;
            let v = &r.vector;
            let expect = 2.0 * PI * dense_expectation(&ab, v, v);
            assert!((peaks.total_weight() + stat - expect).abs() < 1e-12);
            if r.spin == z {
                assert_eq!(stat, 0.0);
            } else if stat.abs() > 1e-8 {
                nonzero += 1;
            }
        }
        assert!(nonzero > 10);
    }

    #[test]
    fn index_and_component_errors() {
        let st = setup(6);
        let z = HalfInt::ZERO;
        let home = st.family.get(z).unwrap();
        assert!(matches!(
            eigen_peaks(&st.t00, &st.t00, home, home, home.len()),
            Err(CorrelatorError::IndexOutOfRange { .. })
        ));
        let two = HalfInt::int(2);
        assert!(matches!(
            eigen_peaks(
                &st.t2[&two],
                &st.t2[&two],
                home,
                st.family.get(two).unwrap(),
                0
            ),
            Err(CorrelatorError::ComponentMismatch { .. })
        ));
    }

    #[test]
    fn binning_examples() {
        let peak = |omega, weight| Peak {
            omega,
            dm: HalfInt::ZERO,
            ds: HalfInt::ZERO,
            weight,
            source: None,
            target: None,
        };
        let single = PeakList {
            peaks: vec![peak(0.33, 2.0)],
        };
        let c = bin_peaks(&single, 0.2).unwrap();
        assert_eq!(c.value(HalfInt::ZERO, HalfInt::ZERO, 1), 2.0 / 0.2);
        assert_eq!(bin_center(1, 0.2), 0.30000000000000004);
        assert!(matches!(
            bin_peaks(&single, 0.0),
            Err(CorrelatorError::InvalidBinWidth(_))
        ));
        // mirror symmetry of the grid
        for w in [0.05, 0.2, 1.0, 3.999] {
            assert_eq!(bin_index(-w, 0.2), -1 - bin_index(w, 0.2));
        }
        assert_eq!(bin_index(0.4, 0.2), 2);
        assert_eq!(bin_index(-0.4, 0.2), -3);

        let st = setup(8);
        let home = st.family.get(HalfInt::ZERO).unwrap();
        let peaks = eigen_peaks(&st.t00, &st.t00, home, home, 12).unwrap();
        let total = peaks.total_weight();
        for width in [0.4, 0.2, 0.1] {
            let c = bin_peaks(&peaks, width).unwrap();
            let integral: f64 = c.coarse().values().sum::<f64>() * width;
            assert!((integral - total).abs() < 1e-12 * total.abs());
        }
    }

    #[test]
    fn fine_bins_sum_to_coarse_bins() {
        let st = setup(8);
        let z = HalfInt::ZERO;
        let p = ThermoParams::new(0.3, 0.1, 0.2);
        let peaks = nats_peaks(&st.t2[&z], &st.t2[&z], &st.family, &p).unwrap();
        let fine = bin_peaks(&peaks, 0.2).unwrap();
        assert!(fine.bins.len() > 3);
        let coarse = fine.coarse();
        // exact by construction: same additions, fixed order
        let mut again: BTreeMap<i64, f64> = BTreeMap::new();
        for slice in fine.bins.values() {
            for (n, b) in slice {
                *again.entry(*n).or_insert(0.0) += b.value;
            }
        }
        assert_eq!(coarse, again);
        // independent accumulation agrees to rounding
        let direct = bin_peaks_coarse(&peaks, 0.2).unwrap();
        for (n, v) in &direct {
            assert!((coarse[n] - v).abs() < 1e-12 * fine.max_abs().max(1.0));
        }
    }

    fn assert_kms_pairing(ab: &PeakList, ba: &PeakList, p: &ThermoParams) -> usize {
        let mut index: BTreeMap<(Option<StateRef>, Option<StateRef>), f64> = BTreeMap::new();
        for peak in &ba.peaks {
            assert!(index
                .insert((peak.source, peak.target), peak.weight)
                .is_none());
        }
        let mut checked = 0;
        for peak in &ab.peaks {
            let partner = index[&(peak.target, peak.source)];
            let factor = if peak.source.is_none() {
                1.0
            } else {
                (-p.beta * (peak.omega - p.mu * peak.dm.value() - p.gamma * peak.ds.value())).exp()
            };
            let expect = peak.weight * factor;
            assert!(
                (partner - expect).abs() <= 1e-12 * expect.abs(),
                "{peak:?}: {partner} vs {expect}"
            );
            checked += 1;
        }
        assert_eq!(checked, ba.peaks.len());
        checked
    }

    #[test]
    fn nats_kms_pairing() {
        for n in [6, 7] {
            let st = setup(n);
            let z = HalfInt::ZERO;
            let params = [
                ThermoParams::new(0.3, 0.1, 0.2),
                ThermoParams::new(-0.5, 0.5, -0.5),
                ThermoParams::new(0.5, -0.5, 0.5),
            ];
            for p in params {
                for (a, b) in [(&st.t00, &st.t00), (&st.t2[&z], &st.t2[&z])] {
                    let ab = nats_peaks(a, b, &st.family, &p).unwrap();
                    let ba = nats_peaks(b, a, &st.family, &p).unwrap();
                    assert!(assert_kms_pairing(&ab, &ba, &p) > 100);
                }
                // non-Hermitian pair with q = 1
                let one = HalfInt::ONE;
                let ab = nats_peaks(&st.t2[&-one], &st.t2[&one], &st.family, &p).unwrap();
                let ba = nats_peaks(&st.t2[&one], &st.t2[&-one], &st.family, &p).unwrap();
                assert!(ab.peaks.iter().all(|pk| pk.dm == one));
                assert_kms_pairing(&ab, &ba, &p);
            }
        }
    }

    #[test]
    fn nats_at_infinite_temperature_is_uniform_average() {
        let st = setup(6);
        let z = HalfInt::ZERO;
        let p = ThermoParams::new(0.0, 0.0, 0.0);
        let peaks = nats_peaks(&st.t00, &st.t00, &st.family, &p).unwrap();
        // total = 2π (Tr(AB)/2^N - (Tr A / 2^N)^2)
        let mut tr_a = 0.0;
        let mut tr_ab = 0.0;
        for (m, b) in &st.t00.blocks {
            let _ = m;
            let mat = &b.matrix;
            tr_a += (0..mat.nrows()).map(|i| mat[(i, i)]).sum::<f64>();
            let sq = mat * mat;
            tr_ab += (0..sq.nrows()).map(|i| sq[(i, i)]).sum::<f64>();
        }
        let dim = 64.0;
        let expect = 2.0 * PI * (tr_ab / dim - (tr_a / dim).powi(2));
        assert!((peaks.total_weight() - expect).abs() < 1e-12);
        let _ = z;
    }

    #[test]
    fn nats_log_ratio_follows_detailed_balance() {
        let st = setup(8);
        let z = HalfInt::ZERO;
        let width = 0.2;
        for p in [
            ThermoParams::new(0.3, 0.1, 0.2),
            ThermoParams::new(0.5, 0.0, 0.0),
        ] {
            for ds in [HalfInt::int(-2), z, HalfInt::int(2)] {
                let curve =
                    nats_log_ratio(&st.t2[&z], &st.t2[&z], &st.family, &p, width, ds).unwrap();
                let mut defined = 0;
                for i in 0..curve.bins.len() {
                    if curve.counts[i] == 0 {
                        continue;
                    }
                    defined += 1;
                    // each bin averages e^{β(Ω - γΔs)} over its peaks
                    let ideal = p.beta * (curve.omegas[i] - p.gamma * ds.value());
                    assert!((curve.mean[i] - ideal).abs() <= p.beta * width / 2.0 + 1e-9);
                }
                assert!(defined > 10);
            }
        }
        // β_eff of a thermal curve at Δs = 0, μq = 0
        let p = ThermoParams::new(0.5, 0.0, 0.0);
        let curve = nats_log_ratio(&st.t00, &st.t00, &st.family, &p, width, z).unwrap();
        let b = beta_eff(&curve, DEFAULT_OMEGA_RANGE).unwrap();
        assert!((b - 0.5).abs() < 0.5 * width / 4.0, "{b}");
    }

    fn synthetic(f: impl Fn(f64) -> f64) -> LogRatioCurve {
        let bins: Vec<i64> = (-30..30).collect();
        let omegas: Vec<f64> = bins.iter().map(|&n| bin_center(n, 0.2)).collect();
        LogRatioCurve {
            bin_width: 0.2,
            mean: omegas.iter().map(|&w| f(w)).collect(),
            std: vec![0.0; bins.len()],
            counts: vec![1; bins.len()],
            bins,
            omegas,
            k: HalfInt::ZERO,
            q: HalfInt::ZERO,
            ds: HalfInt::ZERO,
            s: None,
            beta: 0.0,
        }
    }

    #[test]
    fn effective_parameter_arithmetic() {
        let exact = synthetic(|w| 0.7 * w);
        assert!((beta_eff(&exact, DEFAULT_OMEGA_RANGE).unwrap() - 0.7).abs() < 1e-15);
        assert!(delta_beta(&exact, 0.7, DEFAULT_OMEGA_RANGE).unwrap() < 1e-15);
        let n_bins = exact.defined_in(DEFAULT_OMEGA_RANGE).count();
        assert_eq!(n_bins, 15);

        let c = 0.3;
        let offset = synthetic(|w| 0.7 * w + c);
        let rms_inv: f64 = (offset
            .defined_in(DEFAULT_OMEGA_RANGE)
            .map(|(_, w, _)| w.powi(-2))
            .sum::<f64>()
            / 15.0)
            .sqrt();
        assert!(
            (delta_beta(&offset, 0.7, DEFAULT_OMEGA_RANGE).unwrap() - c * rms_inv).abs() < 1e-14
        );

        let minus = synthetic(|w| 0.5 * w + 0.8);
        let plus = synthetic(|w| 0.5 * w - 0.4);
        let bg = beta_gamma_eff(&minus, &plus).unwrap();
        assert!(bg.iter().all(|(_, v)| (v - 0.3).abs() < 1e-15));
        assert!(delta_beta_gamma(&minus, &plus, 0.3, DEFAULT_OMEGA_RANGE).unwrap() < 1e-15);
        assert!(beta_gamma_eff(&minus, &minus)
            .unwrap()
            .iter()
            .all(|(_, v)| *v == 0.0));

        let mut coarse = synthetic(|w| w);
        coarse.bin_width = 0.4;
        assert!(matches!(
            beta_gamma_eff(&minus, &coarse),
            Err(CorrelatorError::GridMismatch)
        ));
        let empty = synthetic(|_| f64::NAN);
        let mut empty = empty;
        empty.counts.iter_mut().for_each(|c| *c = 0);
        assert!(matches!(
            beta_eff(&empty, DEFAULT_OMEGA_RANGE),
            Err(CorrelatorError::NoBinsInRange { .. })
        ));
    }

    #[test]
    fn log_ratio_of_mirror_symmetric_input_vanishes() {
        let peak = |omega: f64, weight| Peak {
            omega,
            dm: HalfInt::ZERO,
            ds: HalfInt::ZERO,
            weight,
            source: None,
            target: None,
        };
        let peaks = PeakList {
            peaks: vec![
                peak(1.1, 2.0),
                peak(-1.1, 2.0),
                peak(2.5, 0.5),
                peak(-2.5, 0.5),
            ],
        };
        let c = bin_peaks(&peaks, 0.2).unwrap();
        let l = log_ratio(&c, &c, HalfInt::ZERO, HalfInt::ZERO).unwrap();
        assert_eq!(l.len(), 4);
        assert!(l.iter().all(|(_, v)| *v == Some(0.0)));
    }

    #[test]
    fn ensemble_statistics() {
        let st = setup(10);
        let z = HalfInt::ZERO;
        let job = EigenLogRatio {
            family: &st.family,
            m: z,
            a: &st.t00,
            b: &st.t00,
            bin_width: 0.2,
        };
        let home = st.family.get(z).unwrap();
        let idx = eigenstate_window(home, z, 0.0, 2.0);
        assert!(idx.len() > 1);
        let one = job.per_state(&idx[..1], z).unwrap();
        let single = merge_log_ratios(&one, 0.2, z, z, z, Some(z), 0.0);
        assert!(single
            .std
            .iter()
            .zip(&single.counts)
            .all(|(s, c)| *c == 0 || *s == 0.0));
        // identical samples: mean equals the sample, std zero
        let twice = merge_log_ratios(
            &[one[0].clone(), one[0].clone()],
            0.2,
            z,
            z,
            z,
            Some(z),
            0.0,
        );
        for i in 0..twice.bins.len() {
            if twice.counts[i] > 0 {
                assert_eq!(twice.mean[i], single.mean[i]);
                assert_eq!(twice.std[i], 0.0);
            }
        }
        let curve = job.ensemble(z, 0.0, 2.0, z).unwrap();
        assert!(curve.counts.iter().all(|&c| c <= idx.len()));
        assert!(curve
            .std
            .iter()
            .zip(&curve.counts)
            .all(|(s, c)| *c == 0 || *s >= 0.0));
        assert!(matches!(
            job.ensemble(HalfInt::int(40), 0.0, 0.4, z),
            Err(CorrelatorError::EmptyWindow { .. })
        ));
        // deterministic
        assert_eq!(
            job.ensemble(z, 0.0, 2.0, z).unwrap().to_csv(),
            curve.to_csv()
        );
    }

    #[test]
    fn transport_matches_direct_curve() {
        let st = setup(10);
        let (z, one, two) = (HalfInt::ZERO, HalfInt::ONE, HalfInt::int(2));
        let k = two;
        let s = two;
        let width = 0.5;
        let base = EigenLogRatio {
            family: &st.family,
            m: z,
            a: &st.t2[&z],
            b: &st.t2[&z],
            bin_width: width,
        };
        let moved = EigenLogRatio {
            family: &st.family,
            m: one,
            a: &st.t2[&-one],
            b: &st.t2[&one],
            bin_width: width,
        };
        let home = st.family.get(z).unwrap();
        let idx = eigenstate_window(home, s, 0.0, 4.0);
        assert!(idx.len() > 1);
        let other = st.family.get(one).unwrap();
        let moved_idx: Vec<usize> = idx
            .iter()
            .map(|&i| other.find_multiplet(home.records[i].multiplet).unwrap())
            .collect();
        let mut compared = 0;
        for ds in [z, two] {
            let reference = merge_log_ratios(
                &base.per_state(&idx, ds).unwrap(),
                width,
                k,
                z,
                ds,
                Some(s),
                0.0,
            );
            let direct = merge_log_ratios(
                &moved.per_state(&moved_idx, ds).unwrap(),
                width,
                k,
                one,
                ds,
                Some(s),
                0.0,
            );
            let transported = transport_log_ratio(&reference, s, ds, one, k, k, one).unwrap();
            assert_eq!(transported.bins, direct.bins);
            for i in 0..direct.bins.len() {
                assert_eq!(transported.counts[i], direct.counts[i]);
                if direct.counts[i] > 0 {
                    assert!((transported.mean[i] - direct.mean[i]).abs() < 1e-9);
                    assert!((transported.std[i] - direct.std[i]).abs() < 1e-9);
                    compared += 1;
                }
            }
            // L(q) - L(0) is Ω-independent
            let shift = m3_shift(s, ds, one, k, k, one).unwrap();
            assert!(transported
                .mean
                .iter()
                .zip(&reference.mean)
                .all(|(a, b)| a.is_nan() || (a - b - shift).abs() < 1e-12));
        }
        assert!(compared > 10, "{compared}");
        let identity = transport_log_ratio(&synthetic(|w| w), s, z, z, k, k, z).unwrap();
        assert_eq!(identity.mean, synthetic(|w| w).mean);
        // Δs = -2 at s = 2 still has a well-defined transport; Δs beyond s does not
        assert!(transport_log_ratio(&synthetic(|w| w), one, -two, one, k, k, one).is_err());
    }

    #[test]
    fn csv_export_has_header_and_round_trips() {
        let curve = synthetic(|w| 0.1 * w);
        let csv = curve.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "omega_center,dm,ds,value,std,count");
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 6);
            assert_eq!(fields[0].parse::<f64>().unwrap(), curve.omegas[i]);
            assert_eq!(fields[3].parse::<f64>().unwrap(), curve.mean[i]);
        }
        assert_eq!(curve.metadata()["columns"][0], "omega_center");
    }
}
