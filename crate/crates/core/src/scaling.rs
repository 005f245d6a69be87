//! Finite-size scaling: resistance-versus-size fits, the exponent-versus-
//! range fit that locates the transition, presets, and a resumable sweep
//! driver that writes results incrementally.
//!
//! The transport exponent `nu` comes from `R ~ A N^nu` on log-log axes.
//! Collecting `nu(alpha)` over the long-range exponent `alpha` and fitting
//! a line in the window below `alpha_max_fit` gives the slope `kappa` and
//! the crossing point `alpha_c` where `nu = 1`; both a free-intercept fit
//! and one constrained through `nu(0) = -2` (the ballistic limit of a fully
//! connected network) are reported.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::build_long_range_chain;
use crate::observables::transport_report;
use crate::steady_state::{solve_steady_state, SolveOptions};

/// Default upper edge (exclusive) of the fit window in `alpha`.
pub const DEFAULT_ALPHA_MAX_FIT: f64 = 1.5;

/// Result of a power-law fit `y ~ exp(log_amplitude) * x^exponent`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    /// Standard error of the exponent from the residual variance
    /// `s^2 = sum(eps^2) / (q - 2)`.
    pub exponent_err: f64,
    pub log_amplitude: f64,
    /// Root-mean-square of the log-space residuals.
    pub residual_rms: f64,
    pub n_points: usize,
}

/// Ordinary least squares for `ln y = exponent * ln x + log_amplitude`.
///
/// Needs at least three points so the error estimate is defined; every `y`
/// must be positive and finite to take logarithms.
pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<ScalingFit> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "mismatched lengths: {} xs vs {} ys",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: xs.len(),
        });
    }
    for (i, &x) in xs.iter().enumerate() {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidInput(format!(
                "x[{i}] = {x} must be positive to fit logs"
            )));
        }
    }
    for (i, &y) in ys.iter().enumerate() {
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::NonpositiveResistance { index: i, value: y });
        }
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let q = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / q;
    let my = ly.iter().sum::<f64>() / q;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return Err(Error::InvalidInput(
            "all x values coincide; exponent undefined".to_string(),
        ));
    }
    let exponent = sxy / sxx;
    let log_amplitude = my - exponent * mx;
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| {
            let e = y - (exponent * x + log_amplitude);
            e * e
        })
        .sum();
    let s2 = ss_res / (q - 2.0);
    Ok(ScalingFit {
        exponent,
        exponent_err: (s2 / sxx).sqrt(),
        log_amplitude,
        residual_rms: (ss_res / q).sqrt(),
        n_points: xs.len(),
    })
}

/// One linear model for `nu(alpha)` and the transition point it implies.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CriticalPointEstimate {
    /// Slope of `nu(alpha)`.
    pub kappa: f64,
    pub kappa_err: f64,
    /// Intercept `nu(0)`; fixed at -2 in the constrained variant.
    pub intercept: f64,
    /// Range exponent where `nu = 1` (ballistic-to-superdiffusive edge).
    pub alpha_c: f64,
    pub residual_rms: f64,
    pub n_points: usize,
    /// Smallest and largest `alpha` actually used.
    pub alpha_window: (f64, f64),
}

/// Both variants of the `nu(alpha)` fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CriticalPointFit {
    /// `nu = kappa * alpha - 2` (intercept pinned to the ballistic limit).
    pub constrained: CriticalPointEstimate,
    /// `nu = kappa * alpha + intercept` with both parameters free.
    pub free: CriticalPointEstimate,
}

/// Fit `nu(alpha)` linearly over the window `alpha < alpha_max_fit`.
pub fn fit_nu_of_alpha(
    alphas: &[f64],
    nus: &[f64],
    alpha_max_fit: f64,
) -> Result<CriticalPointFit> {
    if alphas.len() != nus.len() {
        return Err(Error::InvalidInput(format!(
            "mismatched lengths: {} alphas vs {} nus",
            alphas.len(),
            nus.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (&a, &nu) in alphas.iter().zip(nus) {
        if a < alpha_max_fit && a.is_finite() && nu.is_finite() {
            xs.push(a);
            ys.push(nu);
        }
    }
    let q = xs.len();
    if q < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: q });
    }
    let qf = q as f64;
    let window = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );

    // Constrained: nu + 2 = kappa * alpha, single parameter.
    let sxx: f64 = xs.iter().map(|a| a * a).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, nu)| a * (nu + 2.0)).sum();
    let kappa_c = sxy / sxx;
    let ss_res_c: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(a, nu)| {
            let e = nu - (kappa_c * a - 2.0);
            e * e
        })
        .sum();
    let s2_c = ss_res_c / (qf - 1.0);
    let constrained = CriticalPointEstimate {
        kappa: kappa_c,
        kappa_err: (s2_c / sxx).sqrt(),
        intercept: -2.0,
        alpha_c: 3.0 / kappa_c,
        residual_rms: (ss_res_c / qf).sqrt(),
        n_points: q,
        alpha_window: window,
    };

    // Free: ordinary least squares with two parameters.
    let mx = xs.iter().sum::<f64>() / qf;
    let my = ys.iter().sum::<f64>() / qf;
    let mut cxx = 0.0;
    let mut cxy = 0.0;
    for (a, nu) in xs.iter().zip(&ys) {
        cxx += (a - mx) * (a - mx);
        cxy += (a - mx) * (nu - my);
    }
    if cxx <= 0.0 {
        return Err(Error::InvalidInput(
            "all alphas in the window coincide; slope undefined".to_string(),
        ));
    }
    let kappa_f = cxy / cxx;
    let intercept_f = my - kappa_f * mx;
    let ss_res_f: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(a, nu)| {
            let e = nu - (kappa_f * a + intercept_f);
            e * e
        })
        .sum();
    let s2_f = ss_res_f / (qf - 2.0);
    let free = CriticalPointEstimate {
        kappa: kappa_f,
        kappa_err: (s2_f / cxx).sqrt(),
        intercept: intercept_f,
        alpha_c: (1.0 - intercept_f) / kappa_f,
        residual_rms: (ss_res_f / qf).sqrt(),
        n_points: q,
        alpha_window: window,
    };

    Ok(CriticalPointFit { constrained, free })
}

/// Chain parameters shared by every point of a sweep.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChainParams {
    pub v: f64,
    pub sigma: f64,
    pub gamma_in: f64,
    pub gamma_out: f64,
}

impl Default for ChainParams {
    fn default() -> Self {
        Self {
            v: 1.0,
            sigma: 1e3,
            gamma_in: 1.0,
            gamma_out: 1.0,
        }
    }
}

/// Grid of `(alpha, n_sites)` points to solve.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepPlan {
    pub alphas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub chain: ChainParams,
}

impl SweepPlan {
    pub fn n_points(&self) -> usize {
        self.alphas.len() * self.sizes.len()
    }
}

/// Alpha grid 1.00, 1.05, ..., 2.00 built from integers so the values are
/// reproducible to the bit.
fn alpha_grid() -> Vec<f64> {
    (0..=20).map(|k| (100 + 5 * k) as f64 / 100.0).collect()
}

/// Sizes solvable on a single workstation in minutes.
pub fn small_system_preset() -> SweepPlan {
    SweepPlan {
        alphas: alpha_grid(),
        sizes: vec![512, 645, 813, 1024],
        chain: ChainParams::default(),
    }
}

/// Sizes for scaling studies near the thermodynamic limit; needs tens of
/// gigabytes of memory and hours of compute per point.
pub fn large_system_preset() -> SweepPlan {
    SweepPlan {
        alphas: alpha_grid(),
        sizes: vec![7500, 8250, 9000],
        chain: ChainParams::default(),
    }
}

/// One grid point of a sweep. `status` is "ok" or the error kind; failed
/// points carry NaN observables so the table keeps its shape.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub n_sites: usize,
    pub current: f64,
    pub resistance: f64,
    pub wall_seconds: f64,
    pub status: String,
}

const SWEEP_HEADER: &str = "alpha,n_sites,current,resistance,wall_seconds,status";

fn format_row(row: &SweepRow) -> String {
    format!(
        "{:.17e},{},{:.17e},{:.17e},{:.17e},{}",
        row.alpha, row.n_sites, row.current, row.resistance, row.wall_seconds, row.status
    )
}

/// Read a sweep table written by [`run_sweep`]. Later duplicates of the
/// same `(alpha, n_sites)` key win, matching the append-only resume logic.
pub fn read_sweep_table(path: &Path) -> Result<Vec<SweepRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut by_key: HashMap<(u64, usize), SweepRow> = HashMap::new();
    let mut order: Vec<(u64, usize)> = Vec::new();
    for record in reader.deserialize() {
        let row: SweepRow = record?;
        let key = (row.alpha.to_bits(), row.n_sites);
        if by_key.insert(key, row).is_none() {
            order.push(key);
        }
    }
    let mut rows: Vec<SweepRow> = order.into_iter().map(|k| by_key.remove(&k).unwrap()).collect();
    rows.sort_by(|a, b| {
        a.alpha
            .partial_cmp(&b.alpha)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.n_sites.cmp(&b.n_sites))
    });
    Ok(rows)
}

/// Solve every grid point of `plan`, appending rows to `out_path` as they
/// finish so an interrupted sweep loses at most one point.
///
/// With `resume`, rows already present in the file with status "ok" are
/// kept and skipped; failed rows are retried. Points run sequentially
/// (memory for the dense matrices is the binding constraint, and each solve
/// already parallelizes internally via `options.workers`).
pub fn run_sweep(
    plan: &SweepPlan,
    options: &SolveOptions,
    out_path: Option<&Path>,
    resume: bool,
) -> Result<Vec<SweepRow>> {
    let mut done: HashMap<(u64, usize), SweepRow> = HashMap::new();
    if resume {
        if let Some(path) = out_path {
            if path.exists() {
                for row in read_sweep_table(path)? {
                    if row.status == "ok" {
                        done.insert((row.alpha.to_bits(), row.n_sites), row);
                    }
                }
            }
        }
    }

    let mut writer = match out_path {
        None => None,
        Some(path) => {
            let fresh = !(resume && path.exists());
            let mut file = std::fs::OpenOptions::new()
                .create(true)
                .append(!fresh)
                .truncate(fresh)
                .write(true)
                .open(path)?;
            if fresh {
                writeln!(file, "{SWEEP_HEADER}")?;
            }
            Some(file)
        }
    };

    let mut rows: Vec<SweepRow> = Vec::with_capacity(plan.n_points());
    for &alpha in &plan.alphas {
        for &n in &plan.sizes {
            let key = (alpha.to_bits(), n);
            if let Some(row) = done.get(&key) {
                rows.push(row.clone());
                continue;
            }
            let row = solve_point(plan, alpha, n, options);
            if let Some(file) = writer.as_mut() {
                writeln!(file, "{}", format_row(&row))?;
                file.flush()?;
            }
            log::info!(
                "sweep point alpha={alpha} n={n}: {} ({:.2}s)",
                row.status,
                row.wall_seconds
            );
            rows.push(row);
        }
    }

    rows.sort_by(|a, b| {
        a.alpha
            .partial_cmp(&b.alpha)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.n_sites.cmp(&b.n_sites))
    });
    Ok(rows)
}

fn solve_point(plan: &SweepPlan, alpha: f64, n: usize, options: &SolveOptions) -> SweepRow {
    let start = Instant::now();
    let outcome = build_long_range_chain(
        n,
        plan.chain.v,
        alpha,
        plan.chain.gamma_in,
        plan.chain.gamma_out,
        plan.chain.sigma,
    )
    .and_then(|model| {
        let sol = solve_steady_state(&model, options)?;
        transport_report(&model, &sol.correlation)
    });
    let wall_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok(report) => SweepRow {
            alpha,
            n_sites: n,
            current: report.current_in,
            resistance: report.resistance,
            wall_seconds,
            status: "ok".to_string(),
        },
        Err(e) => SweepRow {
            alpha,
            n_sites: n,
            current: f64::NAN,
            resistance: f64::NAN,
            wall_seconds,
            status: e.kind().to_string(),
        },
    }
}

/// Per-alpha exponent fit within a sweep analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaFit {
    pub alpha: f64,
    pub fit: ScalingFit,
}

/// Output of [`fit_sweep_table`]: one power-law fit per alpha plus the
/// transition-point fits across alphas.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepAnalysis {
    pub per_alpha: Vec<AlphaFit>,
    pub critical: CriticalPointFit,
    pub alpha_max_fit: f64,
}

/// Fit resistance-versus-size per alpha, then `nu(alpha)` across alphas.
///
/// Rows with non-"ok" status are ignored; alphas with fewer than three
/// usable sizes are skipped. Fails only when fewer than three alphas
/// survive inside the fit window.
pub fn fit_sweep_table(rows: &[SweepRow], alpha_max_fit: f64) -> Result<SweepAnalysis> {
    let mut grouped: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    for row in rows {
        if row.status != "ok" {
            continue;
        }
        match grouped.last_mut() {
            Some((a, list)) if a.to_bits() == row.alpha.to_bits() => {
                list.push((row.n_sites, row.resistance))
            }
            _ => grouped.push((row.alpha, vec![(row.n_sites, row.resistance)])),
        }
    }

    let mut per_alpha = Vec::new();
    for (alpha, mut points) in grouped {
        points.sort_by_key(|&(n, _)| n);
        points.dedup_by_key(|&mut (n, _)| n);
        if points.len() < 3 {
            log::warn!(
                "alpha={alpha}: only {} usable sizes, skipping exponent fit",
                points.len()
            );
            continue;
        }
        let xs: Vec<f64> = points.iter().map(|&(n, _)| n as f64).collect();
        let ys: Vec<f64> = points.iter().map(|&(_, r)| r).collect();
        per_alpha.push(AlphaFit {
            alpha,
            fit: fit_power_law(&xs, &ys)?,
        });
    }

    let alphas: Vec<f64> = per_alpha.iter().map(|f| f.alpha).collect();
    let nus: Vec<f64> = per_alpha.iter().map(|f| f.fit.exponent).collect();
    let critical = fit_nu_of_alpha(&alphas, &nus, alpha_max_fit)?;
    Ok(SweepAnalysis {
        per_alpha,
        critical,
        alpha_max_fit,
    })
}
