//! Pipeline stages. Every file is written here, by the coordinating thread.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;
use su2_kms::correlators::{
    beta_eff, beta_gamma_eff, bin_peaks, delta_beta, delta_beta_gamma, eigen_peaks, mean_std,
    nats_log_ratio, nats_peaks, static_correlator, CorrelatorError, EigenLogRatio, LogRatioCurve,
    Origin,
};
use su2_kms::spectral::{select_eigenstate, thermal_energy, EigenFamily};
use su2_kms::spin_system::{magnetizations, ModelConfig, SectorSet};
use su2_kms::tensor_ops::{build_t00, build_t20, build_t44, lower, SphericalTensor};
use su2_kms::thermo::{
    beta_gamma_fd, massieu_entropy, mean_spin_exact, multiplicities, scaling_point, MassieuEntropy,
};
use su2_kms::HalfInt;

use crate::cache::{ensure_family, load_family};
use crate::config::{RunConfig, TensorBuilder, TensorSpec};
use crate::error::{CliError, CliResult, DataContext};
use crate::svg::{Plot, Series};

/// Files written by a stage plus stage-specific details for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub details: serde_json::Value,
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<PathBuf>) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::data(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
    outputs.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Sectors a run needs: every magnetization for the thermal state, else the
/// root sector only (all analysed tensors have `q = 0`).
pub fn needed_sectors(config: &RunConfig) -> Vec<HalfInt> {
    let n = config.model.n_sites;
    if config.nats.is_some() {
        magnetizations(n).collect()
    } else {
        vec![EigenFamily::root_m(n)]
    }
}

/// `q = 0` component of the requested tensor on the given sectors.
pub fn build_tensor(
    model: &ModelConfig,
    spec: &TensorSpec,
    sectors: &[HalfInt],
) -> CliResult<SphericalTensor> {
    let n = model.n_sites;
    match spec.builder {
        TensorBuilder::T00 => {
            build_t00(model, &SectorSet::with(n, sectors.iter().copied()).data()?).data()
        }
        TensorBuilder::T20 => {
            build_t20(model, &SectorSet::with(n, sectors.iter().copied()).data()?).data()
        }
        TensorBuilder::T40 => {
            // the commutators touch neighbouring sectors, so lower on the full set
            let full = SectorSet::full(n).data()?;
            let mut t = build_t44(model, &full).data()?;
            for _ in 0..4 {
                t = lower(&t, &full).data()?;
            }
            t.blocks.retain(|m, _| sectors.contains(m));
            t.label = "T40".into();
            Ok(t)
        }
    }
}

/// Spin transfers analysed for a rank-`k` tensor from spin `s`.
fn spin_transfers(k: u32, s: HalfInt, n_sites: usize) -> Vec<HalfInt> {
    let max = HalfInt::from_twice(n_sites as i32);
    [-2i32, 0, 2]
        .into_iter()
        .filter(|d| d.unsigned_abs() <= k)
        .map(HalfInt::int)
        .filter(|d| s + *d >= HalfInt::ZERO && s + *d <= max)
        .collect()
}

fn tag(x: HalfInt) -> String {
    let t = x.twice();
    if t < 0 {
        format!("m{}", -t)
    } else {
        t.to_string()
    }
}

pub fn diag(config: &RunConfig, all_sectors: bool) -> CliResult<Outcome> {
    let sectors = if all_sectors {
        magnetizations(config.model.n_sites).collect()
    } else {
        needed_sectors(config)
    };
    let dir = config.resolved_cache_dir();
    let (family, summary) = ensure_family(&config.model, &dir, &sectors)?;
    let outputs = family
        .magnetizations()
        .map(|m| crate::cache::cache_path(&dir, &config.model, m))
        .collect();
    let details = json!({
        "cache_dir": dir.display().to_string(),
        "sectors": family.magnetizations().map(|m| m.twice()).collect::<Vec<_>>(),
        "cache_hits": summary.hits.iter().map(|m| m.twice()).collect::<Vec<_>>(),
        "written": summary.written.iter().map(|m| m.twice()).collect::<Vec<_>>(),
        "diagonalized": summary.diagonalized,
    });
    Ok(Outcome { outputs, details })
}

fn load(config: &RunConfig) -> CliResult<EigenFamily> {
    load_family(
        &config.model,
        &config.resolved_cache_dir(),
        &needed_sectors(config),
    )
}

pub fn correlate(config: &RunConfig) -> CliResult<Outcome> {
    let family = load(config)?;
    let sectors: Vec<HalfInt> = family.magnetizations().collect();
    let n = config.model.n_sites;
    let dir = &config.output_dir;
    let mut outputs = Vec::new();
    let mut entries = Vec::new();
    for spec in &config.tensors {
        let t = build_tensor(&config.model, spec, &sectors)?;
        if let Some(p) = config.nats {
            let peaks = nats_peaks(&t, &t, &family, &p).data()?;
            let mut fine = bin_peaks(&peaks, config.bin_width).data()?;
            fine.origin = Some(Origin::Nats(p));
            let stem = format!("nats_correlator_N{n}_k{}", spec.k);
            write(dir, &format!("{stem}.csv"), &fine.to_csv(), &mut outputs)?;
            let meta = json!({
                "tensor": t.label, "k": spec.k, "q": 0, "bin_width": config.bin_width,
                "origin": fine.origin, "total_weight": peaks.total_weight(), "peaks": peaks.peaks.len(),
            });
            write(dir, &format!("{stem}.json"), &to_json(&meta), &mut outputs)?;
            entries.push(meta);
            continue;
        }
        let root = family.root();
        for &s in &config.spin_targets {
            let alpha = select_eigenstate(root, s, config.beta).data()?;
            let r = &root.records[alpha];
            let peaks = eigen_peaks(&t, &t, root, root, alpha).data()?;
            let stat = static_correlator(&t, &t, root, root, alpha).data()?;
            let mut fine = bin_peaks(&peaks, config.bin_width).data()?;
            fine.origin = Some(Origin::Eigenstate {
                m: root.m,
                index: alpha,
                multiplet: r.multiplet,
                energy: r.energy,
                spin: r.spin,
            });
            let stem = format!("correlator_N{n}_s{}_k{}", tag(s), spec.k);
            write(dir, &format!("{stem}.csv"), &fine.to_csv(), &mut outputs)?;
            let meta = json!({
                "tensor": t.label, "k": spec.k, "q": 0, "s": s.value(), "bin_width": config.bin_width,
                "origin": fine.origin, "static": stat, "total_weight": peaks.total_weight(), "peaks": peaks.peaks.len(),
            });
            write(dir, &format!("{stem}.json"), &to_json(&meta), &mut outputs)?;
            entries.push(meta);
        }
    }
    Ok(Outcome {
        outputs,
        details: json!({ "correlators": entries }),
    })
}

#[derive(Debug, Serialize)]
struct CurveSummary {
    tensor: String,
    k: u32,
    s: Option<f64>,
    ds: f64,
    csv: String,
    beta_eff: Option<f64>,
    delta_beta: Option<f64>,
    mean_std: Option<f64>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct BetaGammaSummary {
    tensor: String,
    k: u32,
    s: Option<f64>,
    reference: Option<f64>,
    delta_beta_gamma: Option<f64>,
    /// `(Ω, (βγ)_eff)` on bins defined for both spin transfers.
    points: Vec<(f64, f64)>,
}

fn range(config: &RunConfig) -> (f64, f64) {
    (config.omega_range[0], config.omega_range[1])
}

fn summarize(
    curve: &LogRatioCurve,
    beta: f64,
    config: &RunConfig,
    label: &str,
    csv: String,
) -> CurveSummary {
    let r = range(config);
    CurveSummary {
        tensor: label.to_string(),
        k: curve.k.value() as u32,
        s: curve.s.map(HalfInt::value),
        ds: curve.ds.value(),
        csv,
        beta_eff: beta_eff(curve, r).ok(),
        delta_beta: delta_beta(curve, beta, r).ok(),
        mean_std: mean_std(curve, r).ok(),
        error: None,
    }
}

/// `L̄/Ω` with `std/Ω` error bars over the defined bins with `Ω > 0`.
pub fn slope_series(
    label: String,
    omegas: &[f64],
    means: &[f64],
    stds: &[f64],
    counts: &[usize],
) -> Series {
    let points = (0..omegas.len())
        .filter(|&i| counts[i] > 0 && omegas[i] > 0.0)
        .map(|i| (omegas[i], means[i] / omegas[i], Some(stds[i] / omegas[i])))
        .collect();
    Series { label, points }
}

pub fn slope_plot(title: String, series: Vec<Series>, beta: f64) -> Plot {
    Plot {
        title,
        x_label: "Omega".into(),
        y_label: "mean L / Omega".into(),
        series,
        reference: Some((beta, format!("beta = {beta}"))),
    }
}

pub fn kms(config: &RunConfig) -> CliResult<Outcome> {
    let family = load(config)?;
    let sectors: Vec<HalfInt> = family.magnetizations().collect();
    let n = config.model.n_sites;
    let dir = &config.output_dir;
    let mut outputs = Vec::new();
    let mut curves = Vec::new();
    let mut bg = Vec::new();
    // (k, ds) → series for the slope plots
    let mut plots: BTreeMap<(u32, i32), Vec<Series>> = BTreeMap::new();
    let beta = config.nats.map_or(config.beta, |p| p.beta);

    for spec in &config.tensors {
        let t = build_tensor(&config.model, spec, &sectors)?;
        let spins: Vec<Option<HalfInt>> = if config.nats.is_some() {
            vec![None]
        } else {
            config.spin_targets.iter().copied().map(Some).collect()
        };
        for s in spins {
            let mut by_ds: BTreeMap<i32, LogRatioCurve> = BTreeMap::new();
            let transfers = match s {
                Some(s) => spin_transfers(spec.k, s, n),
                None => [-2i32, 0, 2]
                    .into_iter()
                    .filter(|d| d.unsigned_abs() <= spec.k)
                    .map(HalfInt::int)
                    .collect(),
            };
            for ds in transfers {
                let result = match (s, config.nats) {
                    (_, Some(p)) => nats_log_ratio(&t, &t, &family, &p, config.bin_width, ds),
                    (Some(s), None) => EigenLogRatio {
                        family: &family,
                        m: family.root().m,
                        a: &t,
                        b: &t,
                        bin_width: config.bin_width,
                    }
                    .ensemble(s, config.beta, config.energy_window, ds),
                    (None, None) => unreachable!("eigenstate mode always has a spin"),
                };
                let stem = match s {
                    Some(s) => format!("logratio_N{n}_s{}_k{}_ds{}", tag(s), spec.k, tag(ds)),
                    None => format!("nats_logratio_N{n}_k{}_ds{}", spec.k, tag(ds)),
                };
                match result {
                    Ok(curve) => {
                        write(dir, &format!("{stem}.csv"), &curve.to_csv(), &mut outputs)?;
                        let mut meta = curve.metadata();
                        meta["tensor"] = json!(t.label);
                        meta["n_sites"] = json!(n);
                        meta["mode"] = json!(if config.nats.is_some() {
                            "nats"
                        } else {
                            "eigenstate"
                        });
                        if let Some(p) = config.nats {
                            meta["nats"] = json!(p);
                        } else {
                            meta["energy_window"] = json!(config.energy_window);
                        }
                        write(dir, &format!("{stem}.json"), &to_json(&meta), &mut outputs)?;
                        curves.push(summarize(
                            &curve,
                            beta,
                            config,
                            &t.label,
                            format!("{stem}.csv"),
                        ));
                        let label = match s {
                            Some(s) => format!("s = {s}"),
                            None => format!("k = {}", spec.k),
                        };
                        plots
                            .entry((spec.k, ds.twice()))
                            .or_default()
                            .push(slope_series(
                                label,
                                &curve.omegas,
                                &curve.mean,
                                &curve.std,
                                &curve.counts,
                            ));
                        by_ds.insert(ds.twice(), curve);
                    }
                    Err(
                        e @ (CorrelatorError::EmptyWindow { .. }
                        | CorrelatorError::NoBinsInRange { .. }),
                    ) => {
                        log::warn!("{stem}: {e}");
                        curves.push(CurveSummary {
                            tensor: t.label.clone(),
                            k: spec.k,
                            s: s.map(HalfInt::value),
                            ds: ds.value(),
                            csv: String::new(),
                            beta_eff: None,
                            delta_beta: None,
                            mean_std: None,
                            error: Some(e.to_string()),
                        });
                    }
                    Err(e) => return Err(CliError::from(su2_kms::Error::from(e))),
                }
            }
            if let (Some(minus), Some(plus)) = (by_ds.get(&-4), by_ds.get(&4)) {
                let points = beta_gamma_eff(minus, plus).data()?;
                let reference = match (s, config.nats) {
                    (_, Some(p)) => Some(p.beta * p.gamma),
                    (Some(s), None) => thermal_energy(family.root(), s, config.beta)
                        .ok()
                        .and_then(|e| beta_gamma_fd(n, e, s, &MassieuEntropy { n_sites: n }).ok()),
                    (None, None) => None,
                };
                bg.push(BetaGammaSummary {
                    tensor: t.label.clone(),
                    k: spec.k,
                    s: s.map(HalfInt::value),
                    reference,
                    delta_beta_gamma: reference
                        .and_then(|r| delta_beta_gamma(minus, plus, r, range(config)).ok()),
                    points,
                });
            }
        }
    }

    for ((k, ds), series) in &plots {
        let mode = if config.nats.is_some() {
            "modified thermal state"
        } else {
            "eigenstates"
        };
        let title = format!(
            "N = {n}, k = {k}, ds = {}: {mode}",
            HalfInt::from_twice(*ds)
        );
        let svg = slope_plot(title, series.clone(), beta).render();
        let prefix = if config.nats.is_some() {
            "nats_slope"
        } else {
            "slope"
        };
        write(
            dir,
            &format!("{prefix}_N{n}_k{k}_ds{}.svg", tag(HalfInt::from_twice(*ds))),
            &svg,
            &mut outputs,
        )?;
    }
    if config.nats.is_none() {
        let mut by_k: BTreeMap<u32, Series> = BTreeMap::new();
        for c in curves.iter().filter(|c| c.ds == 0.0) {
            if let (Some(s), Some(db)) = (c.s, c.delta_beta) {
                let series = by_k.entry(c.k).or_insert_with(|| Series {
                    label: format!("k = {}", c.k),
                    points: vec![],
                });
                series.points.push((s / n as f64, db * n as f64, None));
            }
        }
        if !by_k.is_empty() {
            let plot = Plot {
                title: format!("N = {n}: finite-size slope deviation"),
                x_label: "s / N".into(),
                y_label: "delta beta * N".into(),
                series: by_k.into_values().collect(),
                reference: None,
            };
            write(
                dir,
                &format!("delta_beta_N{n}.svg"),
                &plot.render(),
                &mut outputs,
            )?;
        }
    }

    let summary = json!({
        "mode": if config.nats.is_some() { "nats" } else { "eigenstate" },
        "n_sites": n,
        "beta": beta,
        "nats": config.nats,
        "omega_range": config.omega_range,
        "bin_width": config.bin_width,
        "curves": curves,
        "beta_gamma": bg,
    });
    write(
        dir,
        &format!("summary_N{n}.json"),
        &to_json(&summary),
        &mut outputs,
    )?;
    let computed = summary["curves"]
        .as_array()
        .map_or(0, |c| c.iter().filter(|c| c["error"].is_null()).count());
    if computed == 0 {
        return Err(CliError::data(
            "no log-ratio curve could be computed (see summary for reasons)",
        ));
    }
    Ok(Outcome {
        outputs,
        details: json!({ "curves": computed }),
    })
}

#[derive(Serialize)]
struct MeanSpinRow {
    n_sites: usize,
    beta_gamma: f64,
    mean_spin_exact: f64,
    mean_spin_scaled: f64,
    sqrt_2n_over_pi: f64,
}

#[derive(Serialize)]
struct MultiplicityRow {
    n_sites: usize,
    s: f64,
    count: u128,
    massieu_entropy: f64,
}

fn csv_string<T: Serialize>(rows: &[T]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn thermo(config: &RunConfig) -> CliResult<Outcome> {
    let dir = &config.output_dir;
    let mut outputs = Vec::new();

    let scaling: Vec<_> = (-30..=30)
        .map(|i| scaling_point(i as f64 / 10.0))
        .collect::<Result<_, _>>()
        .data()?;
    write(
        dir,
        "thermo_scaling.csv",
        &csv_string(&scaling)?,
        &mut outputs,
    )?;

    let mut sizes = vec![config.model.n_sites, 100, 500, 1000, 2000];
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::new();
    for &n in &sizes {
        let root = (n as f64 / 8.0).sqrt();
        for i in -10..=10 {
            let bg = i as f64 * 0.4 / (n as f64).sqrt();
            rows.push(MeanSpinRow {
                n_sites: n,
                beta_gamma: bg,
                mean_spin_exact: mean_spin_exact(n, bg),
                mean_spin_scaled: root * scaling_point(root * bg).data()?.s_tilde,
                sqrt_2n_over_pi: (2.0 * n as f64 / std::f64::consts::PI).sqrt(),
            });
        }
    }
    write(
        dir,
        "thermo_mean_spin.csv",
        &csv_string(&rows)?,
        &mut outputs,
    )?;

    let n = config.model.n_sites;
    let table = multiplicities(n).data()?;
    let rows: Vec<MultiplicityRow> = table
        .table
        .iter()
        .map(|(s, c)| {
            Ok(MultiplicityRow {
                n_sites: n,
                s: s.value(),
                count: *c,
                massieu_entropy: massieu_entropy(n, *s)?,
            })
        })
        .collect::<Result<_, su2_kms::thermo::ThermoError>>()
        .data()?;
    write(
        dir,
        &format!("thermo_multiplicity_N{n}.csv"),
        &csv_string(&rows)?,
        &mut outputs,
    )?;
    Ok(Outcome {
        outputs,
        details: json!({ "sizes": sizes }),
    })
}

#[derive(Debug, serde::Deserialize)]
struct CurveRow {
    omega_center: f64,
    #[allow(dead_code)]
    dm: f64,
    #[allow(dead_code)]
    ds: f64,
    value: f64,
    std: f64,
    count: usize,
}

/// Re-renders an SVG for every log-ratio CSV in the output directory.
pub fn plot(config: &RunConfig) -> CliResult<Outcome> {
    let dir = &config.output_dir;
    let mut names: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.contains("logratio_") && name.ends_with(".csv")
        })
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::data(format!(
            "no log-ratio CSVs in {}; run `kms kms` first",
            dir.display()
        )));
    }
    let mut outputs = Vec::new();
    for path in names {
        let mut reader = csv::Reader::from_path(&path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let rows: Vec<CurveRow> = reader
            .deserialize()
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let sidecar = path.with_extension("json");
        let beta = std::fs::read_to_string(&sidecar)
            .ok()
            .and_then(|s| serde_json::from_str::<serde_json::Value>(&s).ok())
            .and_then(|v| v["beta"].as_f64())
            .unwrap_or(config.beta);
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("curve")
            .to_string();
        let omegas: Vec<f64> = rows.iter().map(|r| r.omega_center).collect();
        let means: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let stds: Vec<f64> = rows.iter().map(|r| r.std).collect();
        let counts: Vec<usize> = rows.iter().map(|r| r.count).collect();
        let series = slope_series(stem.clone(), &omegas, &means, &stds, &counts);
        let svg = slope_plot(stem.clone(), vec![series], beta).render();
        write(dir, &format!("{stem}.svg"), &svg, &mut outputs)?;
    }
    Ok(Outcome {
        outputs,
        details: serde_json::Value::Null,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spin_transfer_selection() {
        assert_eq!(spin_transfers(0, HalfInt::ZERO, 12), vec![HalfInt::ZERO]);
        assert_eq!(
            spin_transfers(2, HalfInt::ZERO, 12),
            vec![HalfInt::ZERO, HalfInt::int(2)]
        );
        assert_eq!(spin_transfers(4, HalfInt::int(3), 12).len(), 3);
        assert_eq!(
            spin_transfers(2, HalfInt::int(6), 12),
            vec![HalfInt::int(-2), HalfInt::ZERO]
        );
    }

    #[test]
    fn file_tags_avoid_minus_signs() {
        assert_eq!(tag(HalfInt::int(-2)), "m4");
        assert_eq!(tag(HalfInt::int(2)), "4");
    }

    #[test]
    fn t40_matches_the_lowered_t44_block() {
        let model = ModelConfig::chaotic(8).unwrap();
        let spec = TensorSpec {
            k: 4,
            builder: TensorBuilder::T40,
        };
        let t = build_tensor(&model, &spec, &[HalfInt::ZERO]).unwrap();
        assert_eq!((t.k, t.q), (HalfInt::int(4), HalfInt::ZERO));
        assert_eq!(
            t.blocks.keys().copied().collect::<Vec<_>>(),
            vec![HalfInt::ZERO]
        );
        let b = &t.blocks[&HalfInt::ZERO].matrix;
        for i in 0..b.nrows() {
            for j in 0..i {
                assert!((b[(i, j)] - b[(j, i)]).abs() < 1e-12);
            }
        }
        assert!(t.max_abs() > 0.0);
    }
}
