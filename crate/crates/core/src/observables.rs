//! Transport observables of a steady state: occupations, terminal and cut
//! currents, resistance, and density-profile diagnostics.
//!
//! Current direction is fixed by the injection side: positive currents flow
//! from the injecting reservoir through the network into the extracting
//! one. The two-site test below pins this orientation against the known
//! closed form, so any sign regression fails loudly.

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, KahanSum};
use crate::model::NetworkModel;
use crate::steady_state::{CorrelationMatrix, RESIDUAL_REL_TARGET};

/// Currents below this magnitude count as zero; no resistance is formed.
pub const ZERO_CURRENT_TOL: f64 = 1e-14;

/// Everything transport-related in one bundle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransportReport {
    /// Site occupations `n_i = C[i, i]`.
    pub occupations: Vec<f64>,
    /// Current entering from the injecting reservoir.
    pub current_in: f64,
    /// Current leaving into the extracting reservoir.
    pub current_out: f64,
    /// Coherent current across each cut `k | k+1`, length `n - 1`.
    pub cut_currents: Vec<f64>,
    /// `1 / current_in`.
    pub resistance: f64,
}

/// Site occupations (real diagonal of the correlation matrix).
pub fn occupations(c: &CorrelationMatrix) -> Array1<f64> {
    let m = c.matrix();
    let n = m.nrows();
    let scale = linalg::max_abs(&m.view()).max(1.0);
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let z = m[(i, i)];
        assert!(
            z.im.abs() <= 1e-12 * scale,
            "occupation {i} has imaginary part {:.3e}",
            z.im
        );
        out[i] = z.re;
    }
    out
}

fn support(rate: &Array2<C64>) -> Vec<bool> {
    let n = rate.nrows();
    (0..n)
        .map(|i| (0..n).any(|j| rate[(i, j)].norm() > 0.0 || rate[(j, i)].norm() > 0.0))
        .collect()
}

/// Currents exchanged with the reservoirs:
/// `J_in = Re tr[Gp (1 - C)]` and `J_out = Re tr[Gm C]`.
///
/// Only defined when injection and extraction act on disjoint mode sets;
/// otherwise the split into "in" and "out" is ambiguous and the call fails
/// with [`Error::NotBoundaryDriven`].
pub fn terminal_currents(model: &NetworkModel, c: &CorrelationMatrix) -> Result<(f64, f64)> {
    let n = model.n_modes();
    if c.n_modes() != n {
        return Err(Error::InvalidInput(format!(
            "state has {} modes, model has {n}",
            c.n_modes()
        )));
    }
    let sup_in = support(&model.gamma_plus);
    let sup_out = support(&model.gamma_minus);
    if sup_in.iter().zip(&sup_out).any(|(&a, &b)| a && b) {
        return Err(Error::NotBoundaryDriven);
    }
    let m = c.matrix();
    let mut j_in = KahanSum::new();
    let mut j_out = KahanSum::new();
    for i in 0..n {
        for k in 0..n {
            // tr[Gp (1 - C)] = sum_i Gp[i, i] - sum_ik Gp[i, k] C[k, i]
            j_in.add(-(model.gamma_plus[(i, k)] * m[(k, i)]).re);
            j_out.add((model.gamma_minus[(i, k)] * m[(k, i)]).re);
        }
        j_in.add(model.gamma_plus[(i, i)].re);
    }
    Ok((j_in.value(), j_out.value()))
}

/// Coherent current across every cut of the (ordered) mode chain.
///
/// Entry `k` is the particle flow from sites `0..=k` to sites `k+1..`,
/// `J_k = 2 sum_{i <= k < j} Im(conj(H[i, j]) C[i, j])`, evaluated
/// incrementally in `O(n^2)` with compensated sums.
pub fn cut_currents(model: &NetworkModel, c: &CorrelationMatrix) -> Array1<f64> {
    let n = model.n_modes();
    let m = c.matrix();
    if n < 2 {
        return Array1::zeros(0);
    }
    let bond = |i: usize, j: usize| -> f64 {
        2.0 * (model.hopping[(i, j)].conj() * m[(i, j)]).im
    };
    let mut out = Array1::zeros(n - 1);
    let mut running = KahanSum::new();
    // Cut 0: bonds from site 0 to everything on the right.
    for j in 1..n {
        running.add(bond(0, j));
    }
    out[0] = running.value();
    for cut in 1..(n - 1) {
        // Site `cut` crosses to the left part: bonds into the old left part
        // disappear, bonds to the remaining right part appear.
        for i in 0..cut {
            running.add(-bond(i, cut));
        }
        for j in (cut + 1)..n {
            running.add(bond(cut, j));
        }
        out[cut] = running.value();
    }
    out
}

/// Resistance `1 / current`; fails with [`Error::ZeroCurrent`] when the
/// current is below [`ZERO_CURRENT_TOL`].
pub fn resistance(current: f64) -> Result<f64> {
    if !current.is_finite() || current.abs() <= ZERO_CURRENT_TOL {
        return Err(Error::ZeroCurrent { current });
    }
    Ok(1.0 / current)
}

/// Assemble the transport report and verify current conservation.
///
/// The conservation gate is `|J_in - J_out| <= 1e-10 max(|J_in|, |J_out|) +
/// sqrt(n) * r_target` where `r_target` is the solver's stationarity
/// target: the difference of terminal currents equals the trace of the
/// equation-of-motion residual, so it can never be smaller than what the
/// solve guarantees.
pub fn transport_report(model: &NetworkModel, c: &CorrelationMatrix) -> Result<TransportReport> {
    let (current_in, current_out) = terminal_currents(model, c)?;
    let n = model.n_modes();
    let floor = (n as f64).sqrt()
        * RESIDUAL_REL_TARGET
        * linalg::fro_norm(&model.gamma_plus.view());
    let tol = 1e-10 * current_in.abs().max(current_out.abs()) + floor;
    let defect = (current_in - current_out).abs();
    if defect > tol {
        return Err(Error::ConsistencyFailure {
            context: "terminal current conservation".to_string(),
            defect,
            tolerance: tol,
        });
    }
    Ok(TransportReport {
        occupations: occupations(c).to_vec(),
        current_in,
        current_out,
        cut_currents: cut_currents(model, c).to_vec(),
        resistance: resistance(current_in)?,
    })
}

/// Least-squares line through the bulk of a density profile.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LinearProfileFit {
    pub slope: f64,
    pub intercept: f64,
    /// Coefficient of determination of the linear model.
    pub r_squared: f64,
    pub n_used: usize,
}

/// Fit `n_i ~ slope * i + intercept` over the bulk, excluding a fraction
/// `edge_fraction` of sites at each end (at least one site per end).
///
/// A diffusive profile is linear (`r_squared ~ 1`); long-range jumps bend
/// it, which is what the profile criterion in the scaling analysis detects.
pub fn bulk_linear_fit(occupations: &Array1<f64>, edge_fraction: f64) -> Result<LinearProfileFit> {
    if !(0.0..0.5).contains(&edge_fraction) {
        return Err(Error::InvalidInput(format!(
            "edge fraction must be in [0, 0.5), got {edge_fraction}"
        )));
    }
    let n = occupations.len();
    let skip = ((n as f64 * edge_fraction).floor() as usize).max(1);
    if n < 2 * skip + 3 {
        return Err(Error::InsufficientPoints {
            needed: 2 * skip + 3,
            got: n,
        });
    }
    let xs: Vec<f64> = (skip..(n - skip)).map(|i| i as f64).collect();
    let ys: Vec<f64> = (skip..(n - skip)).map(|i| occupations[i]).collect();
    let q = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / q;
    let mean_y = ys.iter().sum::<f64>() / q;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (slope * x + intercept);
            e * e
        })
        .sum();
    // A numerically flat profile fits any line perfectly.
    let r_squared = if syy < 1e-30 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearProfileFit {
        slope,
        intercept,
        r_squared,
        n_used: xs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_long_range_chain;
    use crate::steady_state::{solve_steady_state, SolveOptions};
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn dimer(v: f64, g: f64) -> NetworkModel {
        NetworkModel::new(
            array![[c(0.0, 0.0), c(v, 0.0)], [c(v, 0.0), c(0.0, 0.0)]],
            array![[c(g, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]],
            array![[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(g, 0.0)]],
            Array2::zeros((2, 2)),
        )
        .unwrap()
    }

    #[test]
    fn dimer_currents_match_closed_form() {
        let (v, g) = (0.8, 1.3);
        let m = dimer(v, g);
        let state = crate::dynamics::brute_force_steady_state(&m).unwrap();
        let report = transport_report(&m, &state).unwrap();
        let expect = 2.0 * g * v * v / (g * g + 4.0 * v * v);
        assert!((report.current_in - expect).abs() < 1e-13);
        assert!((report.current_out - expect).abs() < 1e-13);
        assert_eq!(report.cut_currents.len(), 1);
        assert!((report.cut_currents[0] - expect).abs() < 1e-13);
        assert!((report.resistance - 1.0 / expect).abs() < 1e-10);
        // Positive current: flow from the injection site to the extraction site.
        assert!(report.current_in > 0.0);
    }

    #[test]
    fn cut_currents_agree_with_terminal_on_solved_chain() {
        let model = build_long_range_chain(10, 1.0, 1.4, 1.0, 0.8, 2.0).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let report = transport_report(&model, &sol.correlation).unwrap();
        for (k, j) in report.cut_currents.iter().enumerate() {
            let rel = (j - report.current_in).abs() / report.current_in.abs();
            assert!(rel < 1e-9, "cut {k} deviates by {rel:.3e}");
        }
    }

    #[test]
    fn incremental_cuts_match_direct_evaluation() {
        let model = build_long_range_chain(9, 1.0, 1.1, 0.9, 0.6, 1.5).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let fast = cut_currents(&model, &sol.correlation);
        let m = sol.correlation.matrix();
        let n = model.n_modes();
        for cut in 0..(n - 1) {
            let mut direct = 0.0;
            for i in 0..=cut {
                for j in (cut + 1)..n {
                    direct += 2.0 * (model.hopping[(i, j)].conj() * m[(i, j)]).im;
                }
            }
            assert!((fast[cut] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn overlapping_reservoirs_are_rejected() {
        let mut gp = Array2::<C64>::zeros((2, 2));
        gp[(0, 0)] = c(1.0, 0.0);
        let mut gm = Array2::<C64>::zeros((2, 2));
        gm[(0, 0)] = c(0.5, 0.0); // same site as injection
        let m = NetworkModel::new(
            array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
            gp,
            gm,
            Array2::zeros((2, 2)),
        )
        .unwrap();
        let state = crate::dynamics::brute_force_steady_state(&m).unwrap();
        assert!(matches!(
            terminal_currents(&m, &state),
            Err(Error::NotBoundaryDriven)
        ));
    }

    #[test]
    fn zero_current_has_no_resistance() {
        assert!(matches!(
            resistance(0.0),
            Err(Error::ZeroCurrent { .. })
        ));
        assert!(matches!(
            resistance(5e-15),
            Err(Error::ZeroCurrent { .. })
        ));
        assert!((resistance(2.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn undriven_network_carries_no_current() {
        // Extraction only: the steady state is empty and currents vanish.
        let mut gm = Array2::<C64>::zeros((3, 3));
        gm[(2, 2)] = c(1.0, 0.0);
        let mut hopping = Array2::<C64>::zeros((3, 3));
        for i in 0..2 {
            hopping[(i, i + 1)] = c(1.0, 0.0);
            hopping[(i + 1, i)] = c(1.0, 0.0);
        }
        let m = NetworkModel::new(hopping, Array2::zeros((3, 3)), gm, Array2::zeros((3, 3)))
            .unwrap();
        let state = crate::dynamics::brute_force_steady_state(&m).unwrap();
        let (j_in, j_out) = terminal_currents(&m, &state).unwrap();
        assert!(j_in.abs() < 1e-14);
        assert!(j_out.abs() < 1e-14);
        assert!(matches!(
            transport_report(&m, &state),
            Err(Error::ZeroCurrent { .. })
        ));
    }

    #[test]
    fn bulk_fit_recovers_exact_line() {
        let n = 40;
        let occ = Array1::from_iter((0..n).map(|i| 0.9 - 0.01 * i as f64));
        let fit = bulk_linear_fit(&occ, 0.05).unwrap();
        assert!((fit.slope + 0.01).abs() < 1e-12);
        assert!((fit.intercept - 0.9).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.n_used, 36);
    }

    #[test]
    fn bulk_fit_flags_curved_profiles() {
        let n = 40;
        let occ = Array1::from_iter((0..n).map(|i| {
            let x = i as f64 / (n - 1) as f64;
            0.5 + 0.4 * (1.0 - 2.0 * x).powi(3) // cubic, strongly non-linear
        }));
        let fit = bulk_linear_fit(&occ, 0.05).unwrap();
        assert!(fit.r_squared < 0.99, "r^2 {}", fit.r_squared);
    }

    #[test]
    fn bulk_fit_needs_enough_sites() {
        let occ = Array1::from_vec(vec![0.5, 0.4, 0.3]);
        assert!(matches!(
            bulk_linear_fit(&occ, 0.05),
            Err(Error::InsufficientPoints { .. })
        ));
    }
}
