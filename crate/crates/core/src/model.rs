//! Quadratic open-network model: coherent hopping, injection/extraction
//! rates, and a dephasing matrix.
//!
//! The state of the network is tracked through the two-point correlation
//! matrix `C[m, m'] = <cdag_{m'} c_m>`. Its equation of motion is closed:
//!
//! ```text
//! dC/dt = -i [H, C] + Gp - {Gp + Gm, C} / 2 + sigma o C - {diag(sigma), C} / 2
//! ```
//!
//! where `H` is the Hermitian hopping matrix, `Gp`/`Gm` are positive
//! semidefinite injection/extraction rate matrices, `sigma` is the real
//! symmetric positive semidefinite dephasing matrix, and `o` is the
//! elementwise product. Everything downstream (spectral solver, dynamics,
//! observables) consumes this container.

use ndarray::{Array2, ArrayView2};
use ndarray_linalg::Eigh;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative tolerance for structural checks (Hermiticity, positivity).
const STRUCT_TOL: f64 = 1e-12;

/// Dense description of a driven, dephasing fermionic network.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    /// Hermitian hopping matrix `H` (diagonal entries are onsite energies).
    pub hopping: Array2<C64>,
    /// Injection rate matrix `Gp`, Hermitian positive semidefinite.
    pub gamma_plus: Array2<C64>,
    /// Extraction rate matrix `Gm`, Hermitian positive semidefinite.
    pub gamma_minus: Array2<C64>,
    /// Dephasing matrix `sigma`, real symmetric positive semidefinite.
    pub sigma: Array2<f64>,
}

/// One violated structural requirement, reported by [`validate_model`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Violation {
    /// Which field is at fault: "hopping", "gamma_plus", "gamma_minus", "sigma".
    pub field: String,
    /// Violated property, e.g. "hermitian", "positive_semidefinite".
    pub property: String,
    /// Measured size of the violation (0 when not meaningful).
    pub defect: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: {} violated (defect {:.3e})",
            self.field, self.property, self.defect
        )
    }
}

impl NetworkModel {
    /// Build a model, rejecting it if any structural requirement fails.
    pub fn new(
        hopping: Array2<C64>,
        gamma_plus: Array2<C64>,
        gamma_minus: Array2<C64>,
        sigma: Array2<f64>,
    ) -> Result<Self> {
        let model = Self {
            hopping,
            gamma_plus,
            gamma_minus,
            sigma,
        };
        let violations = validate_model(&model);
        if violations.is_empty() {
            Ok(model)
        } else {
            Err(Error::InvalidModel(violations))
        }
    }

    /// Build without validation. Useful for tests that construct invalid
    /// models on purpose; solver entry points re-validate anyway.
    pub fn new_unchecked(
        hopping: Array2<C64>,
        gamma_plus: Array2<C64>,
        gamma_minus: Array2<C64>,
        sigma: Array2<f64>,
    ) -> Self {
        Self {
            hopping,
            gamma_plus,
            gamma_minus,
            sigma,
        }
    }

    /// Number of modes (sites).
    pub fn n_modes(&self) -> usize {
        self.hopping.nrows()
    }

    /// Total decay matrix `Gp + Gm`.
    pub fn gamma_total(&self) -> Array2<C64> {
        &self.gamma_plus + &self.gamma_minus
    }

    /// Validate and return all violations (empty when the model is valid).
    pub fn validate(&self) -> Vec<Violation> {
        validate_model(self)
    }
}

/// Check every structural requirement and collect the violations.
///
/// Shape problems short-circuit the property checks for the affected field;
/// otherwise all fields are checked independently so one call reports
/// everything that is wrong.
pub fn validate_model(model: &NetworkModel) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = model.hopping.nrows();

    let shape_ok = |name: &str, rows: usize, cols: usize, out: &mut Vec<Violation>| -> bool {
        if rows != cols || rows != n || n == 0 {
            out.push(Violation {
                field: name.to_string(),
                property: "square_matching_dimension".to_string(),
                defect: 0.0,
            });
            false
        } else {
            true
        }
    };

    let hop_ok = shape_ok("hopping", model.hopping.nrows(), model.hopping.ncols(), &mut out);
    let gp_ok = shape_ok(
        "gamma_plus",
        model.gamma_plus.nrows(),
        model.gamma_plus.ncols(),
        &mut out,
    );
    let gm_ok = shape_ok(
        "gamma_minus",
        model.gamma_minus.nrows(),
        model.gamma_minus.ncols(),
        &mut out,
    );
    let sg_ok = shape_ok("sigma", model.sigma.nrows(), model.sigma.ncols(), &mut out);

    if hop_ok {
        check_complex_hermitian("hopping", &model.hopping.view(), false, &mut out);
    }
    if gp_ok {
        check_complex_hermitian("gamma_plus", &model.gamma_plus.view(), true, &mut out);
    }
    if gm_ok {
        check_complex_hermitian("gamma_minus", &model.gamma_minus.view(), true, &mut out);
    }
    if sg_ok {
        check_real_symmetric_psd("sigma", &model.sigma.view(), &mut out);
    }

    out
}

fn check_complex_hermitian(
    name: &str,
    a: &ArrayView2<C64>,
    require_psd: bool,
    out: &mut Vec<Violation>,
) {
    if !linalg::all_finite(a) {
        out.push(Violation {
            field: name.to_string(),
            property: "finite".to_string(),
            defect: f64::INFINITY,
        });
        return;
    }
    let scale = linalg::max_abs(a).max(1.0);
    let herm = linalg::hermiticity_defect(a);
    if herm > STRUCT_TOL * scale {
        out.push(Violation {
            field: name.to_string(),
            property: "hermitian".to_string(),
            defect: herm,
        });
        return;
    }
    if require_psd {
        if let Some(defect) = psd_defect_complex(a, STRUCT_TOL * scale) {
            out.push(Violation {
                field: name.to_string(),
                property: "positive_semidefinite".to_string(),
                defect,
            });
        }
    }
}

fn check_real_symmetric_psd(name: &str, a: &ArrayView2<f64>, out: &mut Vec<Violation>) {
    if !a.iter().all(|x| x.is_finite()) {
        out.push(Violation {
            field: name.to_string(),
            property: "finite".to_string(),
            defect: f64::INFINITY,
        });
        return;
    }
    let n = a.nrows();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    let mut sym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            sym = sym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if sym > STRUCT_TOL * scale {
        out.push(Violation {
            field: name.to_string(),
            property: "symmetric".to_string(),
            defect: sym,
        });
        return;
    }
    if let Some(defect) = psd_defect_real(a, STRUCT_TOL * scale) {
        out.push(Violation {
            field: name.to_string(),
            property: "positive_semidefinite".to_string(),
            defect,
        });
    }
}

/// Negative-eigenvalue defect of a Hermitian matrix, `None` if PSD within tol.
/// Diagonal matrices are checked in O(n); dense ones need an eigensolve.
fn psd_defect_complex(a: &ArrayView2<C64>, tol: f64) -> Option<f64> {
    let n = a.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)].norm() == 0.0));
    let min = if diagonal {
        (0..n).fold(f64::INFINITY, |m, i| m.min(a[(i, i)].re))
    } else {
        let (vals, _) = a
            .to_owned()
            .eigh(ndarray_linalg::UPLO::Lower)
            .expect("hermitian eigensolve during validation");
        vals.iter().fold(f64::INFINITY, |m, &x| m.min(x))
    };
    if min < -tol {
        Some(-min)
    } else {
        None
    }
}

fn psd_defect_real(a: &ArrayView2<f64>, tol: f64) -> Option<f64> {
    let n = a.nrows();
    let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || a[(i, j)] == 0.0));
    let min = if diagonal {
        (0..n).fold(f64::INFINITY, |m, i| m.min(a[(i, i)]))
    } else {
        let (vals, _) = a
            .to_owned()
            .eigh(ndarray_linalg::UPLO::Lower)
            .expect("symmetric eigensolve during validation");
        vals.iter().fold(f64::INFINITY, |m, &x| m.min(x))
    };
    if min < -tol {
        Some(-min)
    } else {
        None
    }
}

/// Build a boundary-driven chain with power-law hopping `H[i, j] = v /
/// |i - j|^alpha`, injection `gamma_in` on the first site, extraction
/// `gamma_out` on the last, and uniform onsite dephasing `sigma`.
pub fn build_long_range_chain(
    n_sites: usize,
    v: f64,
    alpha: f64,
    gamma_in: f64,
    gamma_out: f64,
    sigma: f64,
) -> Result<NetworkModel> {
    if n_sites < 2 {
        return Err(Error::InvalidInput(format!(
            "chain needs at least 2 sites, got {n_sites}"
        )));
    }
    if !(v.is_finite() && v > 0.0) {
        return Err(Error::InvalidInput(format!(
            "hopping amplitude must be positive and finite, got {v}"
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidInput(format!(
            "hopping exponent must be positive and finite, got {alpha}"
        )));
    }
    for (name, x) in [
        ("gamma_in", gamma_in),
        ("gamma_out", gamma_out),
        ("sigma", sigma),
    ] {
        if !(x.is_finite() && x >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "{name} must be nonnegative and finite, got {x}"
            )));
        }
    }

    let n = n_sites;
    let mut hopping = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = (i as f64 - j as f64).abs();
                hopping[(i, j)] = C64::new(v / r.powf(alpha), 0.0);
            }
        }
    }
    let mut gamma_plus = Array2::<C64>::zeros((n, n));
    gamma_plus[(0, 0)] = C64::new(gamma_in, 0.0);
    let mut gamma_minus = Array2::<C64>::zeros((n, n));
    gamma_minus[(n - 1, n - 1)] = C64::new(gamma_out, 0.0);
    let sigma_mat = Array2::<f64>::eye(n) * sigma;

    NetworkModel::new(hopping, gamma_plus, gamma_minus, sigma_mat)
}

/// Structure of the nonzero dephasing entries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    /// No dephasing at all.
    None,
    /// Every diagonal entry nonzero, no off-diagonal ones.
    OnsiteAll,
    /// Some diagonal entries nonzero, no off-diagonal ones.
    OnsiteSubset,
    /// At least one off-diagonal entry nonzero.
    General,
}

/// Sparsity pattern of the dephasing matrix, used to pick a solve strategy
/// and to index the restricted superoperator.
#[derive(Clone, Debug)]
pub struct DephasingPattern {
    /// Nonzero index pairs in row-major order.
    pub indices: Vec<(usize, usize)>,
    /// Classification of the pattern.
    pub kind: PatternKind,
}

impl DephasingPattern {
    /// Number of nonzero entries (the dimension of the restricted system).
    pub fn n_sigma(&self) -> usize {
        self.indices.len()
    }

    /// Site list for purely diagonal patterns, `None` for general ones.
    pub fn sites(&self) -> Option<Vec<usize>> {
        match self.kind {
            PatternKind::None | PatternKind::OnsiteAll | PatternKind::OnsiteSubset => {
                Some(self.indices.iter().map(|&(i, _)| i).collect())
            }
            PatternKind::General => None,
        }
    }
}

/// Extract the dephasing pattern, ignoring entries with magnitude at or
/// below `zero_tol` (use 0.0 to keep everything that is not exactly zero).
pub fn dephasing_pattern(sigma: &ArrayView2<f64>, zero_tol: f64) -> DephasingPattern {
    let n = sigma.nrows();
    let mut indices = Vec::new();
    let mut off_diagonal = false;
    for i in 0..n {
        for j in 0..n {
            if sigma[(i, j)].abs() > zero_tol {
                indices.push((i, j));
                if i != j {
                    off_diagonal = true;
                }
            }
        }
    }
    let kind = if indices.is_empty() {
        PatternKind::None
    } else if off_diagonal {
        PatternKind::General
    } else if indices.len() == n {
        PatternKind::OnsiteAll
    } else {
        PatternKind::OnsiteSubset
    };
    DephasingPattern { indices, kind }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn chain_has_power_law_couplings() {
        let m = build_long_range_chain(6, 1.0, 1.5, 1.0, 1.0, 0.5).unwrap();
        // Distance-3 coupling between the first and fourth site.
        let expect = 3.0f64.powf(-1.5);
        assert!((m.hopping[(0, 3)].re - expect).abs() < 1e-15);
        assert!((m.hopping[(3, 0)].re - expect).abs() < 1e-15);
        assert_eq!(m.hopping[(2, 2)], C64::new(0.0, 0.0));
        assert!((m.gamma_plus[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((m.gamma_minus[(5, 5)].re - 1.0).abs() < 1e-15);
        assert!((m.sigma[(4, 4)] - 0.5).abs() < 1e-15);
        assert_eq!(m.sigma[(0, 1)], 0.0);
    }

    #[test]
    fn chain_rejects_bad_parameters() {
        assert!(build_long_range_chain(1, 1.0, 1.5, 1.0, 1.0, 0.0).is_err());
        assert!(build_long_range_chain(4, 0.0, 1.5, 1.0, 1.0, 0.0).is_err());
        assert!(build_long_range_chain(4, 1.0, -0.2, 1.0, 1.0, 0.0).is_err());
        assert!(build_long_range_chain(4, 1.0, 1.5, -1.0, 1.0, 0.0).is_err());
        assert!(build_long_range_chain(4, 1.0, 1.5, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn validation_collects_all_violations() {
        let n = 3;
        let mut hopping = Array2::<C64>::zeros((n, n));
        hopping[(0, 1)] = C64::new(1.0, 0.0); // missing conjugate partner
        let mut gp = Array2::<C64>::zeros((n, n));
        gp[(0, 0)] = C64::new(-1.0, 0.0); // negative rate
        let gm = Array2::<C64>::zeros((n, n));
        let mut sigma = Array2::<f64>::zeros((n, n));
        sigma[(0, 2)] = 0.3; // asymmetric
        let model = NetworkModel::new_unchecked(hopping, gp, gm, sigma);
        let violations = validate_model(&model);
        let fields: Vec<_> = violations.iter().map(|v| v.field.as_str()).collect();
        assert!(fields.contains(&"hopping"));
        assert!(fields.contains(&"gamma_plus"));
        assert!(fields.contains(&"sigma"));
        assert_eq!(violations.len(), 3);
    }

    #[test]
    fn validation_catches_dense_indefinite_rates() {
        let hopping = Array2::<C64>::zeros((2, 2));
        // Hermitian but indefinite: eigenvalues +/- 1.
        let gp = array![
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
        ];
        let gm = Array2::<C64>::zeros((2, 2));
        let sigma = Array2::<f64>::zeros((2, 2));
        let model = NetworkModel::new_unchecked(hopping, gp, gm, sigma);
        let violations = validate_model(&model);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].property, "positive_semidefinite");
        assert!((violations[0].defect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_nan() {
        let mut hopping = Array2::<C64>::zeros((2, 2));
        hopping[(0, 0)] = C64::new(f64::NAN, 0.0);
        let model = NetworkModel::new_unchecked(
            hopping,
            Array2::zeros((2, 2)),
            Array2::zeros((2, 2)),
            Array2::zeros((2, 2)),
        );
        let violations = validate_model(&model);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].property, "finite");
    }

    #[test]
    fn pattern_classification() {
        let z = Array2::<f64>::zeros((3, 3));
        assert_eq!(dephasing_pattern(&z.view(), 0.0).kind, PatternKind::None);

        let full = Array2::<f64>::eye(3);
        let p = dephasing_pattern(&full.view(), 0.0);
        assert_eq!(p.kind, PatternKind::OnsiteAll);
        assert_eq!(p.n_sigma(), 3);
        assert_eq!(p.sites().unwrap(), vec![0, 1, 2]);

        let mut subset = Array2::<f64>::zeros((3, 3));
        subset[(1, 1)] = 2.0;
        let p = dephasing_pattern(&subset.view(), 0.0);
        assert_eq!(p.kind, PatternKind::OnsiteSubset);
        assert_eq!(p.sites().unwrap(), vec![1]);

        let mut general = Array2::<f64>::eye(3);
        general[(0, 1)] = 0.5;
        general[(1, 0)] = 0.5;
        let p = dephasing_pattern(&general.view(), 0.0);
        assert_eq!(p.kind, PatternKind::General);
        assert_eq!(p.sites(), None);
        // Row-major ordering of the index list.
        assert_eq!(p.indices[0], (0, 0));
        assert_eq!(p.indices[1], (0, 1));
    }

    #[test]
    fn pattern_zero_tol_drops_small_entries() {
        let mut s = Array2::<f64>::eye(4);
        s[(2, 2)] = 1e-14;
        let p = dephasing_pattern(&s.view(), 1e-12);
        assert_eq!(p.kind, PatternKind::OnsiteSubset);
        assert_eq!(p.sites().unwrap(), vec![0, 1, 3]);
    }
}
