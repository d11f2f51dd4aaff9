//! Thermodynamics of the modified non-Abelian thermal state
//! `ρ ∝ exp[-β(H - μ S_z - γ S)]`: partition functions, multiplet counting,
//! sector entropies and the large-N scaling functions of `⟨S⟩`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{binomial, erfc, ln_factorial, log_sum_exp, CompensatedSum};
use crate::spectral::{EigenFamily, EigenSystem};
use crate::su2::HalfInt;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("spin {s} is not admissible for N = {n_sites}")]
    InvalidSpin { n_sites: usize, s: HalfInt },
    #[error("spectrum is empty")]
    EmptySpectrum,
    #[error("spectrum must list every multiplet once; sector m = {0} omits some")]
    IncompleteSpectrum(HalfInt),
    #[error("finite difference at s = {s} needs s - 1 and s + 1 inside [0, {max}]")]
    BoundarySpin { s: HalfInt, max: HalfInt },
    #[error("no spin-{s} multiplets within the energy window around E = {energy}")]
    EmptyHistogram { energy: f64, s: HalfInt },
    #[error("argument {0} is outside the representable range")]
    Overflow(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThermoParams {
    pub beta: f64,
    pub mu: f64,
    pub gamma: f64,
}

impl ThermoParams {
    pub fn new(beta: f64, mu: f64, gamma: f64) -> Self {
        ThermoParams { beta, mu, gamma }
    }

    pub fn is_finite(&self) -> bool {
        self.beta.is_finite() && self.mu.is_finite() && self.gamma.is_finite()
    }
}

/// `ln G_s(x)`, `G_s(x) = sinh(x(s+½)) / ((2s+1) sinh(x/2))`.
pub fn ln_g_function(s: HalfInt, x: f64) -> f64 {
    let a = s.value() + 0.5;
    let x = x.abs();
    if a * x < 1e-3 {
        let x2 = x * x;
        let a2 = a * a;
        let series = 1.0
            + x2 * (a2 / 6.0 - 1.0 / 24.0)
            + x2 * x2 * (a2 * a2 / 120.0 - a2 / 144.0 + 7.0 / 5760.0);
        return series.ln();
    }
    (a - 0.5) * x + (-(-2.0 * a * x).exp_m1()).ln() - (-(-x).exp_m1()).ln() - (2.0 * a).ln()
}

/// Mean of `e^{x m}` over `m = -s..=s`; 1 at `x = 0`.
pub fn g_function(s: HalfInt, x: f64) -> f64 {
    ln_g_function(s, x).exp()
}

fn coth(y: f64) -> f64 {
    1.0 / y.tanh()
}

/// Brillouin function `B_s(x)`; requires `s > 0`.
pub fn brillouin(s: HalfInt, x: f64) -> f64 {
    assert!(s > HalfInt::ZERO, "Brillouin function needs s > 0");
    let sv = s.value();
    let a = (2.0 * sv + 1.0) / (2.0 * sv);
    let b = 1.0 / (2.0 * sv);
    if x.abs() < 1e-3 {
        return x * (sv + 1.0) / (3.0 * sv) - x.powi(3) * (a.powi(4) - b.powi(4)) / 45.0;
    }
    a * coth(a * x) - b * coth(b * x)
}

/// One `(energy, spin)` pair per multiplet.
pub type Levels = Vec<(f64, HalfInt)>;

/// Multiplet levels from a sector that contains every multiplet exactly once
/// (`m = 0` for even `N`, `m = ½` for odd `N`).
pub fn multiplet_levels(system: &EigenSystem) -> Result<Levels, ThermoError> {
    if system.m != EigenFamily::root_m(system.config.n_sites) {
        return Err(ThermoError::IncompleteSpectrum(system.m));
    }
    Ok(system.records.iter().map(|r| (r.energy, r.spin)).collect())
}

fn ln_weight(energy: f64, s: HalfInt, p: &ThermoParams) -> f64 {
    (s.multiplicity() as f64).ln() + ln_g_function(s, p.beta * p.mu)
        - p.beta * (energy - p.gamma * s.value())
}

/// `ln Z` with `Z = Σ_α (2s_α+1) G_{s_α}(βμ) e^{-β(E_α - γ s_α)}`.
pub fn ln_nats_partition(
    levels: &[(f64, HalfInt)],
    params: &ThermoParams,
) -> Result<f64, ThermoError> {
    if levels.is_empty() {
        return Err(ThermoError::EmptySpectrum);
    }
    let terms: Vec<f64> = levels
        .iter()
        .map(|&(e, s)| ln_weight(e, s, params))
        .collect();
    Ok(log_sum_exp(&terms))
}

pub fn nats_partition(
    levels: &[(f64, HalfInt)],
    params: &ThermoParams,
) -> Result<f64, ThermoError> {
    let ln_z = ln_nats_partition(levels, params)?;
    if ln_z > 709.0 {
        return Err(ThermoError::Overflow(ln_z));
    }
    Ok(ln_z.exp())
}

/// `ln Z` by direct summation over every `(α, m)` of a full family.
pub fn ln_nats_partition_direct(
    family: &EigenFamily,
    params: &ThermoParams,
) -> Result<f64, ThermoError> {
    let terms: Vec<f64> = family
        .systems()
        .flat_map(|sys| {
            sys.records.iter().map(move |r| {
                -params.beta
                    * (r.energy - params.mu * sys.m.value() - params.gamma * r.spin.value())
            })
        })
        .collect();
    if terms.is_empty() {
        return Err(ThermoError::EmptySpectrum);
    }
    Ok(log_sum_exp(&terms))
}

/// Thermal averages of `S_z` and of the spin quantum number `S`.
pub fn nats_mean_spin(
    levels: &[(f64, HalfInt)],
    params: &ThermoParams,
) -> Result<(f64, f64), ThermoError> {
    let ln_z = ln_nats_partition(levels, params)?;
    let x = params.beta * params.mu;
    let mut sz = CompensatedSum::default();
    let mut spin = CompensatedSum::default();
    for &(e, s) in levels {
        let p = (ln_weight(e, s, params) - ln_z).exp();
        spin.add(p * s.value());
        if s > HalfInt::ZERO {
            sz.add(p * s.value() * brillouin(s, s.value() * x));
        }
    }
    Ok((sz.value(), spin.value()))
}

fn check_spin(n_sites: usize, s: HalfInt) -> Result<(), ThermoError> {
    if s < HalfInt::ZERO || s.twice() > n_sites as i32 || (s.twice() - n_sites as i32) % 2 != 0 {
        return Err(ThermoError::InvalidSpin { n_sites, s });
    }
    Ok(())
}

/// `ln` of the number of spin-`s` multiplets of `N` qubits,
/// `N!(2s+1) / ((N/2-s)! (N/2+s+1)!)`.
pub fn massieu_entropy(n_sites: usize, s: HalfInt) -> Result<f64, ThermoError> {
    check_spin(n_sites, s)?;
    let n = n_sites as i64;
    let lo = (n - s.twice() as i64) / 2;
    let hi = (n + s.twice() as i64) / 2 + 1;
    Ok(ln_factorial(n) + (s.multiplicity() as f64).ln() - ln_factorial(lo) - ln_factorial(hi))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorMultiplicity {
    pub n_sites: usize,
    pub table: BTreeMap<HalfInt, u128>,
}

impl SectorMultiplicity {
    /// `Σ_s count(s)(2s+1)`, which equals `2^N`.
    pub fn dimension(&self) -> u128 {
        self.table
            .iter()
            .map(|(s, c)| c * s.multiplicity() as u128)
            .sum()
    }
}

/// Exact multiplet counts `C(N, N/2-s) - C(N, N/2-s-1)`.
pub fn multiplicities(n_sites: usize) -> Result<SectorMultiplicity, ThermoError> {
    let n = n_sites as u64;
    let mut table = BTreeMap::new();
    let mut twice = (n_sites % 2) as i32;
    while twice <= n_sites as i32 {
        let s = HalfInt::from_twice(twice);
        let k = (n - twice as u64) / 2;
        let upper = binomial(n, k).ok_or(ThermoError::Overflow(n as f64))?;
        let lower = if k == 0 {
            0
        } else {
            binomial(n, k - 1).ok_or(ThermoError::Overflow(n as f64))?
        };
        table.insert(s, upper - lower);
        twice += 2;
    }
    Ok(SectorMultiplicity { n_sites, table })
}

/// Sector entropy `S_tot(E, s)` used by the spin chemical-potential estimate.
pub trait SectorEntropy {
    fn entropy(&self, energy: f64, s: HalfInt) -> Result<f64, ThermoError>;
}

/// Infinite-temperature entropy: independent of energy.
#[derive(Clone, Copy, Debug)]
pub struct MassieuEntropy {
    pub n_sites: usize,
}

impl SectorEntropy for MassieuEntropy {
    fn entropy(&self, _energy: f64, s: HalfInt) -> Result<f64, ThermoError> {
        massieu_entropy(self.n_sites, s)
    }
}

/// `ln` of the number of spin-`s` multiplets with `|E_α - E| ≤ window/2`.
#[derive(Clone, Debug)]
pub struct HistogramEntropy {
    pub levels: Levels,
    pub window: f64,
}

impl HistogramEntropy {
    pub fn new(levels: Levels) -> Self {
        HistogramEntropy {
            levels,
            window: 0.4,
        }
    }
}

impl SectorEntropy for HistogramEntropy {
    fn entropy(&self, energy: f64, s: HalfInt) -> Result<f64, ThermoError> {
        let count = self
            .levels
            .iter()
            .filter(|(e, spin)| *spin == s && (e - energy).abs() <= self.window / 2.0)
            .count();
        if count == 0 {
            return Err(ThermoError::EmptyHistogram { energy, s });
        }
        Ok((count as f64).ln())
    }
}

/// `βγ ≈ -[S_tot(E, s+1) - S_tot(E, s-1)] / 2`.
pub fn beta_gamma_fd(
    n_sites: usize,
    energy: f64,
    s: HalfInt,
    entropy: &dyn SectorEntropy,
) -> Result<f64, ThermoError> {
    let max = HalfInt::from_twice(n_sites as i32);
    if s - HalfInt::ONE < HalfInt::ZERO || s + HalfInt::ONE > max {
        return Err(ThermoError::BoundarySpin { s, max });
    }
    let up = entropy.entropy(energy, s + HalfInt::ONE)?;
    let down = entropy.entropy(energy, s - HalfInt::ONE)?;
    Ok(-(up - down) / 2.0)
}

/// `erfc(-γ̃) e^{γ̃²}`, i.e. `[1 + erf(γ̃)] e^{γ̃²}`.
fn scaled_erfc(g: f64) -> Result<f64, ThermoError> {
    if g * g > 700.0 {
        return Err(ThermoError::Overflow(g));
    }
    Ok(erfc(-g) * (g * g).exp())
}

/// Reduced partition function `𝒵̃(γ̃)`.
pub fn scaling_z(gamma_tilde: f64) -> Result<f64, ThermoError> {
    let g = gamma_tilde;
    let e = scaled_erfc(g)?;
    Ok(g / PI.sqrt() + 0.5 * (1.0 + 2.0 * g * g) * e)
}

/// `s̃(γ̃) = d ln 𝒵̃ / dγ̃`.
pub fn scaling_s(gamma_tilde: f64) -> Result<f64, ThermoError> {
    let g = gamma_tilde;
    let e = scaled_erfc(g)?;
    let sp = PI.sqrt();
    let num = 4.0 * (1.0 + g * g) + 2.0 * sp * g * (3.0 + 2.0 * g * g) * e;
    let den = 2.0 * g + sp * (1.0 + 2.0 * g * g) * e;
    Ok(num / den)
}

/// `⟨S⟩` in the ensemble weighted by `count(s)(2s+1) e^{βγ s}`.
pub fn mean_spin_exact(n_sites: usize, beta_gamma: f64) -> f64 {
    let spins: Vec<HalfInt> = (0..=n_sites / 2)
        .map(|i| HalfInt::from_twice((n_sites % 2) as i32 + 2 * i as i32))
        .collect();
    let ln_w: Vec<f64> = spins
        .iter()
        .map(|&s| {
            massieu_entropy(n_sites, s).expect("admissible by construction")
                + (s.multiplicity() as f64).ln()
                + beta_gamma * s.value()
        })
        .collect();
    let ln_z = log_sum_exp(&ln_w);
    spins
        .iter()
        .zip(&ln_w)
        .map(|(s, w)| s.value() * (w - ln_z).exp())
        .collect::<CompensatedSum>()
        .value()
}

/// `γ̃ = √(N/8) βγ`.
pub fn gamma_tilde(n_sites: usize, beta_gamma: f64) -> f64 {
    (n_sites as f64 / 8.0).sqrt() * beta_gamma
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub gamma_tilde: f64,
    pub z_tilde: f64,
    pub s_tilde: f64,
}

pub fn scaling_point(gamma_tilde: f64) -> Result<ScalingPoint, ThermoError> {
    Ok(ScalingPoint {
        gamma_tilde,
        z_tilde: scaling_z(gamma_tilde)?,
        s_tilde: scaling_s(gamma_tilde)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{diagonalize, DegeneracyPolicy};
    use crate::spin_system::ModelConfig;

    fn h(twice: i32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    #[test]
    fn g_function_examples() {
        for t in 0..=20 {
            assert!((g_function(h(t), 0.0) - 1.0).abs() < 1e-15);
        }
        for x in [-2.0, -0.3, 1e-5, 0.7, 2.0] {
            assert!((g_function(HalfInt::HALF, x) - (x / 2.0f64).cosh()).abs() < 1e-14);
        }
        for t in 0..=20 {
            let s = h(t);
            for i in -40..=40 {
                let x = i as f64 * 0.05;
                let direct: f64 = s.projections().map(|m| (x * m.value()).exp()).sum::<f64>()
                    / s.multiplicity() as f64;
                assert!(
                    (g_function(s, x) - direct).abs() < 1e-12 * direct.max(1.0),
                    "s={s} x={x}"
                );
            }
        }
        // continuity across the series switch
        let s = h(7);
        let edge = 1e-3 / 4.0;
        for x in [edge * 0.999_999, edge * 1.000_001] {
            let direct: f64 = s.projections().map(|m| (x * m.value()).exp()).sum::<f64>()
                / s.multiplicity() as f64;
            assert!((g_function(s, x) - direct).abs() < 1e-14);
        }
        // no overflow at large arguments
        assert!(ln_g_function(h(20), 800.0).is_finite());
    }

    #[test]
    fn brillouin_examples() {
        for t in 1..=12 {
            let s = h(t);
            let sv = s.value();
            for x in [1e-6, 1e-5, 3e-5] {
                assert!((brillouin(s, x) - x * (sv + 1.0) / (3.0 * sv)).abs() < 1e-9 * x);
            }
            // series and closed form agree across the switch
            let a = (2.0 * sv + 1.0) / (2.0 * sv);
            let b = 1.0 / (2.0 * sv);
            let x = 1.1e-3;
            let closed = a / (a * x).tanh() - b / (b * x).tanh();
            let series = x * (sv + 1.0) / (3.0 * sv) - x.powi(3) * (a.powi(4) - b.powi(4)) / 45.0;
            assert!((closed - series).abs() < 1e-12);
            assert!((brillouin(s, 100.0 * sv) - 1.0).abs() < 1e-12);
            for x in [0.01, 0.5, 3.0] {
                assert_eq!(brillouin(s, -x), -brillouin(s, x));
            }
            // B_s = d ln G / dx scaled: s B_s(s x) = (ln G_s)'(x)
            let x = 0.37;
            let d = 1e-6;
            let deriv = (ln_g_function(s, x + d) - ln_g_function(s, x - d)) / (2.0 * d);
            assert!((sv * brillouin(s, sv * x) - deriv).abs() < 1e-8);
        }
        // B_{1/2}(x) = tanh(x)
        assert!((brillouin(HalfInt::HALF, 0.8) - 0.8f64.tanh()).abs() < 1e-14);
    }

    #[test]
    fn multiplicity_examples() {
        assert_eq!(massieu_entropy(4, HalfInt::int(2)).unwrap(), 0.0);
        assert!((massieu_entropy(4, HalfInt::ZERO).unwrap() - 2f64.ln()).abs() < 1e-14);
        let m4 = multiplicities(4).unwrap();
        assert_eq!(m4.dimension(), 16);
        assert_eq!(m4.table[&HalfInt::ONE], 3);
        for n in [4usize, 5, 6, 7, 8, 20, 64, 100] {
            let m = multiplicities(n).unwrap();
            assert_eq!(m.dimension(), 1u128 << n);
            for (s, c) in &m.table {
                let e = massieu_entropy(n, *s).unwrap();
                assert!((e - (*c as f64).ln()).abs() < 1e-9 * e.abs().max(1.0));
            }
        }
        assert!(matches!(
            massieu_entropy(4, HalfInt::HALF),
            Err(ThermoError::InvalidSpin { .. })
        ));
        assert!(matches!(
            massieu_entropy(4, HalfInt::int(3)),
            Err(ThermoError::InvalidSpin { .. })
        ));
    }

    #[test]
    fn counts_match_diagonalization() {
        for n in [6usize, 7, 8] {
            let config = ModelConfig::chaotic(n).unwrap();
            let root = diagonalize(
                &config,
                EigenFamily::root_m(n),
                &DegeneracyPolicy::for_sites(n),
            )
            .unwrap();
            let counts = root.spin_counts();
            let closed = multiplicities(n).unwrap();
            for (s, c) in &closed.table {
                assert_eq!(
                    counts.get(s).copied().unwrap_or(0) as u128,
                    *c,
                    "N={n} s={s}"
                );
            }
        }
    }

    #[test]
    fn partition_function_examples() {
        let config = ModelConfig::chaotic(6).unwrap();
        let family = EigenFamily::all(&config, &DegeneracyPolicy::for_sites(6)).unwrap();
        let levels = multiplet_levels(family.root()).unwrap();
        let z0 = nats_partition(&levels, &ThermoParams::new(0.0, 0.0, 0.0)).unwrap();
        assert!((z0 - 64.0).abs() < 1e-12);

        let p = ThermoParams::new(0.3, 0.0, 0.0);
        let brute: f64 = family
            .systems()
            .flat_map(|s| s.records.iter())
            .map(|r| (-0.3 * r.energy).exp())
            .sum();
        assert!((nats_partition(&levels, &p).unwrap() - brute).abs() < 1e-12 * brute);

        for p in [
            ThermoParams::new(0.3, 0.1, 0.2),
            ThermoParams::new(-0.5, 0.5, -0.4),
            ThermoParams::new(2.0, -1.0, 0.3),
        ] {
            let a = ln_nats_partition(&levels, &p).unwrap();
            let b = ln_nats_partition_direct(&family, &p).unwrap();
            assert!((a - b).abs() < 1e-12, "{p:?}");
        }
        // μ = 0 reduces G to 1
        let p = ThermoParams::new(0.4, 0.0, 0.3);
        let by_hand: f64 = levels
            .iter()
            .map(|(e, s)| s.multiplicity() as f64 * (-0.4 * (e - 0.3 * s.value())).exp())
            .sum();
        assert!((nats_partition(&levels, &p).unwrap() - by_hand).abs() < 1e-12 * by_hand);

        assert!(matches!(
            ln_nats_partition(&[], &p),
            Err(ThermoError::EmptySpectrum)
        ));
        let other = family.get(HalfInt::ONE).unwrap();
        assert!(matches!(
            multiplet_levels(other),
            Err(ThermoError::IncompleteSpectrum(_))
        ));
    }

    #[test]
    fn partition_from_multiplicities_at_infinite_temperature() {
        let p = ThermoParams::new(0.0, 0.0, 0.0);
        for n in [10usize, 11, 40, 200, 1000] {
            let terms: Vec<f64> = (0..=n / 2)
                .map(|i| HalfInt::from_twice((n % 2) as i32 + 2 * i as i32))
                .map(|s| massieu_entropy(n, s).unwrap() + ln_weight(0.0, s, &p))
                .collect();
            let ln_z = log_sum_exp(&terms);
            assert!((ln_z - n as f64 * 2f64.ln()).abs() < 1e-12 * ln_z);
        }
    }

    #[test]
    fn spin_chemical_potential_finite_difference() {
        // symmetric entropy gives zero
        struct Flat;
        impl SectorEntropy for Flat {
            fn entropy(&self, _: f64, _: HalfInt) -> Result<f64, ThermoError> {
                Ok(1.5)
            }
        }
        assert_eq!(beta_gamma_fd(10, 0.0, HalfInt::int(2), &Flat).unwrap(), 0.0);
        assert!(matches!(
            beta_gamma_fd(10, 0.0, HalfInt::ZERO, &MassieuEntropy { n_sites: 10 }),
            Err(ThermoError::BoundarySpin { .. })
        ));
        assert!(matches!(
            beta_gamma_fd(10, 0.0, HalfInt::int(5), &MassieuEntropy { n_sites: 10 }),
            Err(ThermoError::BoundarySpin { .. })
        ));

        // s = O(√N): tends to zero
        let small: Vec<f64> = [100usize, 400, 1600, 6400]
            .iter()
            .map(|&n| {
                let s = HalfInt::int((n as f64).sqrt() as i32 / 2);
                beta_gamma_fd(n, 0.0, s, &MassieuEntropy { n_sites: n })
                    .unwrap()
                    .abs()
            })
            .collect();
        assert!(small.windows(2).all(|w| w[1] < w[0]), "{small:?}");

        // s = 𝒮N: approaches ln((1+2𝒮)/(1-2𝒮))
        let scr: f64 = 0.2;
        let limit = ((1.0 + 2.0 * scr) / (1.0 - 2.0 * scr)).ln();
        let mut prev = f64::INFINITY;
        for n in [100usize, 1000, 10000] {
            let s = HalfInt::int((scr * n as f64) as i32);
            let bg = beta_gamma_fd(n, 0.0, s, &MassieuEntropy { n_sites: n }).unwrap();
            let sv = s.value();
            let nf = n as f64;
            let finite = -((1.0 + 1.5 / sv) / (1.0 + 0.5 / sv)).ln() - (1.0 - 2.0 * sv / nf).ln()
                + (1.0 + 2.0 * (sv + 2.0) / nf).ln()
                - 2.0 / (2.0 * sv + 1.0);
            assert!((bg - finite).abs() < 3.0 / nf, "N={n}: {bg} vs {finite}");
            let dev = (bg - limit).abs();
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn histogram_entropy() {
        let levels: Levels = vec![
            (0.0, HalfInt::ZERO),
            (0.1, HalfInt::ZERO),
            (0.05, HalfInt::int(2)),
            (3.0, HalfInt::int(2)),
        ];
        let hist = HistogramEntropy::new(levels);
        let bg = beta_gamma_fd(8, 0.05, HalfInt::ONE, &hist).unwrap();
        assert!((bg - (-(0.0 - 2f64.ln()) / 2.0)).abs() < 1e-15);
        assert!(matches!(
            hist.entropy(10.0, HalfInt::ZERO),
            Err(ThermoError::EmptyHistogram { .. })
        ));
    }

    #[test]
    fn scaling_function_examples() {
        assert!((scaling_z(0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((scaling_s(0.0).unwrap() - 4.0 / PI.sqrt()).abs() < 1e-12);
        for g in [5.0, 10.0, 20.0] {
            let s = scaling_s(g).unwrap();
            assert!((s - 2.0 * g).abs() < 3.0 / g, "g={g}: {s}");
        }
        for g in [-5.0, -10.0, -20.0] {
            let s = scaling_s(g).unwrap();
            assert!((s + 3.0 / g).abs() < 10.0 / g.abs().powi(3), "g={g}: {s}");
        }
        // derivative of ln 𝒵̃
        for g in [-2.0, -0.4, 0.0, 0.9, 3.0] {
            let d = 1e-5;
            let num = (scaling_z(g + d).unwrap().ln() - scaling_z(g - d).unwrap().ln()) / (2.0 * d);
            assert!((num - scaling_s(g).unwrap()).abs() < 1e-7);
        }
        // integral definition (2/√π)∫x² e^{-x²+2γ̃x} dx by the trapezoid rule
        for g in [-1.0, 0.0, 0.5, 1.5] {
            let dx = 1e-3;
            let integral: f64 = (0..20_000)
                .map(|i| {
                    let x = (i as f64 + 0.5) * dx;
                    x * x * (-x * x + 2.0 * g * x).exp() * dx
                })
                .sum::<f64>()
                * 2.0
                / PI.sqrt();
            assert!((integral - scaling_z(g).unwrap()).abs() < 1e-6 * integral);
        }
        assert!(matches!(scaling_z(30.0), Err(ThermoError::Overflow(_))));
        assert!(matches!(scaling_s(-27.0), Err(ThermoError::Overflow(_))));
    }

    #[test]
    fn mean_spin_examples() {
        let target = (2000.0 / PI).sqrt();
        let s0 = mean_spin_exact(1000, 0.0);
        assert!((s0 - target).abs() < 0.05 * target, "{s0}");
        let s_half = mean_spin_exact(1000, 0.5);
        assert!((s_half - 125.0).abs() < 12.5, "{s_half}");
        let cold = mean_spin_exact(1000, -50.0);
        assert!(cold >= 0.0 && cold < 0.1);
        // the continuum form tracks the exact sum shifted by half a unit of spin
        for n in [500usize, 1000, 2000, 8000] {
            let limit = 4.0 / (n as f64).sqrt();
            for i in -10..=10 {
                let bg = limit * i as f64 / 10.0;
                let exact = mean_spin_exact(n, bg);
                let scaled = (n as f64 / 8.0).sqrt() * scaling_s(gamma_tilde(n, bg)).unwrap();
                assert!(
                    (exact + 0.5 - scaled).abs() < 5e-3 * exact,
                    "N={n} bg={bg}: {exact} vs {scaled}"
                );
                if n >= 2000 {
                    assert!(
                        (exact - scaled).abs() < 0.03 * exact,
                        "N={n} bg={bg}: {exact} vs {scaled}"
                    );
                }
            }
        }
    }

    #[test]
    fn magnetization_matches_brillouin_estimate() {
        let config = ModelConfig::chaotic(12).unwrap();
        let root = diagonalize(&config, HalfInt::ZERO, &DegeneracyPolicy::for_sites(12)).unwrap();
        let levels = multiplet_levels(&root).unwrap();
        for (beta, mu) in [(0.1, 5.0), (0.1, 10.0)] {
            let p = ThermoParams::new(beta, mu, 0.0);
            let (sz, s) = nats_mean_spin(&levels, &p).unwrap();
            let estimate = s * brillouin_real(s, beta * mu * s);
            assert!(
                (sz - estimate).abs() < 0.15 * sz,
                "βμ={}: {sz} vs {estimate}",
                beta * mu
            );
        }
    }

    /// Brillouin function at a non-half-integer `s`.
    fn brillouin_real(s: f64, x: f64) -> f64 {
        let a = (2.0 * s + 1.0) / (2.0 * s);
        let b = 1.0 / (2.0 * s);
        a / (a * x).tanh() - b / (b * x).tanh()
    }
}
