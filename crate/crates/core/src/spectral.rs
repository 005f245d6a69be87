//! Spectral decomposition of the non-Hermitian evolution generator.
//!
//! The drift part of the equation of motion is `A C + C A^dagger` with
//!
//! ```text
//! A = -i H - (Gp + Gm) / 2 - diag(sigma) / 2
//! ```
//!
//! Diagonalizing `A = V diag(lambda) W^dagger` (bi-orthogonal bases,
//! `W^dagger V = I`) turns Lyapunov-type equations into elementwise algebra:
//! the solution of `A X + X A^dagger + S = 0` is
//!
//! ```text
//! X = V (Delta o (W^dagger S W)) V^dagger,
//! Delta[p, q] = -1 / (lambda_p + conj(lambda_q)),
//! ```
//!
//! where `o` is the elementwise product. `Delta` is Hermitian positive
//! definite whenever every mode pair decays (it is the Gram matrix of the
//! functions `exp(lambda_p t)` on `t > 0`), so it admits a low-rank pivoted
//! Cholesky factor `Delta ~ P P^dagger`. That factor is what makes the
//! restricted dephasing superoperator affordable at large sizes.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eig, Inverse, OperationNorm};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::{self, LowRankFactor};
use crate::model::NetworkModel;

/// Identifier of the sign/ordering convention used by this module. Recorded
/// in solver reports so archived results stay interpretable if internals
/// ever change.
pub const SIGN_CONVENTION: &str =
    "generator:dC/dt=AC+CA^dag+S; delta[p,q]=-1/(lambda_p+conj(lambda_q)); v1";

/// Acceptable bi-orthogonality defect `max |W^dagger V - I|`.
const BASIS_DEFECT_TOL: f64 = 1e-10;

/// Defect above which Newton refinement of the inverse basis kicks in.
const BASIS_REFINE_TRIGGER: f64 = 1e-12;

/// Relative truncation tolerance for the pivoted Cholesky factor of Delta.
const GRAM_REL_TOL: f64 = 1e-15;

/// Condition-number level that triggers a diagnostic warning.
const CONDITION_WARN: f64 = 1e8;

/// The (non-Hermitian) one-body generator `A`.
#[derive(Clone, Debug)]
pub struct EffectiveHamiltonian {
    pub matrix: Array2<C64>,
}

/// Build `A = -i H - (Gp + Gm) / 2 - diag(sigma) / 2` from a model.
pub fn effective_hamiltonian(model: &NetworkModel) -> EffectiveHamiltonian {
    let n = model.n_modes();
    let gamma = model.gamma_total();
    let mut a = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -C64::i() * model.hopping[(i, j)] - 0.5 * gamma[(i, j)];
        }
        a[(i, i)] -= C64::new(0.5 * model.sigma[(i, i)], 0.0);
    }
    EffectiveHamiltonian { matrix: a }
}

/// Eigendecomposition of the generator plus derived steady-state data.
#[derive(Clone, Debug)]
pub struct SpectralData {
    /// Eigenvalues `lambda_p`; all have strictly negative real part.
    pub eigenvalues: Array1<C64>,
    /// Right eigenvectors as columns of `V`.
    pub right_vectors: Array2<C64>,
    /// Rows of `W^dagger`, the inverse of `V` (so `W^dagger V = I`).
    pub left_dagger: Array2<C64>,
    /// Pair kernel `Delta[p, q] = -1 / (lambda_p + conj(lambda_q))`.
    pub delta: Array2<C64>,
    /// Low-rank factor `P` with `Delta ~ P P^dagger`.
    pub gram: LowRankFactor,
    /// Threshold used for the dissipative-pair check.
    pub stability_tol: f64,
    /// One-norm condition estimate of the eigenbasis.
    pub condition: f64,
    /// Measured bi-orthogonality defect `max |W^dagger V - I|`.
    pub basis_defect: f64,
    /// Whether the complex-symmetric fast path produced the left basis.
    pub symmetric_path: bool,
}

impl SpectralData {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Rank of the low-rank factor of Delta.
    pub fn gram_rank(&self) -> usize {
        self.gram.rank
    }

    /// Solve `A X + X A^dagger + S = 0` for Hermitian `S` via the spectral
    /// formula. Four GEMMs; the result is hermitized to remove roundoff.
    pub fn lyapunov_solve(&self, s: &ArrayView2<C64>) -> Array2<C64> {
        let w = linalg::dagger(&self.left_dagger.view()); // W
        let mut g = self.left_dagger.dot(s).dot(&w);
        g.zip_mut_with(&self.delta, |gv, dv| *gv *= dv);
        let x = self.right_vectors.dot(&g).dot(&linalg::dagger(&self.right_vectors.view()));
        linalg::hermitize(&x)
    }
}

/// Diagonalize the generator and prepare the steady-state kernel.
///
/// `stability_tol` overrides the default dissipative-pair threshold of
/// `1e-12 * max |lambda|`. Fails with [`Error::NonDissipativePair`] when a
/// mode pair does not decay and with [`Error::NonDiagonalizable`] when the
/// eigenbasis cannot be inverted to working precision.
pub fn decompose(
    h_eff: &EffectiveHamiltonian,
    stability_tol: Option<f64>,
) -> Result<SpectralData> {
    let a = &h_eff.matrix;
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "generator must be square and nonempty, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !linalg::all_finite(&a.view()) {
        return Err(Error::InvalidInput(
            "generator contains non-finite entries".to_string(),
        ));
    }

    // Extracting the mean diagonal before the eigensolve keeps the backward
    // error proportional to the spread of the spectrum rather than to its
    // offset; with strong dephasing the offset dominates by orders of
    // magnitude.
    let mut shift = C64::new(0.0, 0.0);
    for i in 0..n {
        shift += a[(i, i)];
    }
    shift /= n as f64;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= shift;
    }

    let (mut eigenvalues, mut v) = shifted
        .eig()
        .map_err(|e| Error::InvalidInput(format!("eigensolve failed: {e}")))?;
    for lam in eigenvalues.iter_mut() {
        *lam += shift;
    }

    // Complex-symmetric generators (real hopping, diagonal rates) have
    // W = conj(V) once columns are normalized to v^T v = 1, which avoids a
    // dense inversion.
    let mut symmetric_path = false;
    let mut left_dagger: Option<Array2<C64>> = None;
    let mut basis_defect = f64::INFINITY;
    if transpose_defect(&a.view()) <= 1e-13 * linalg::max_abs(&a.view()).max(1.0) {
        if let Some(vs) = transpose_normalize(&v) {
            let wd = vs.t().to_owned(); // W^dagger = V^T
            let defect = biortho_defect(&wd, &vs);
            if defect <= BASIS_DEFECT_TOL {
                v = vs;
                left_dagger = Some(wd);
                basis_defect = defect;
                symmetric_path = true;
            }
        }
    }

    if left_dagger.is_none() {
        let mut wd = v
            .inv()
            .map_err(|_| Error::NonDiagonalizable {
                defect: f64::INFINITY,
                tolerance: BASIS_DEFECT_TOL,
            })?;
        let mut defect = biortho_defect(&wd, &v);
        // One Newton step squares the inversion residual, which rescues
        // ill-conditioned but still diagonalizable bases.
        let mut newton = 0;
        while defect > BASIS_REFINE_TRIGGER && newton < 2 {
            let correction = wd.dot(&v).dot(&wd);
            wd = &wd * C64::new(2.0, 0.0) - &correction;
            let refined = biortho_defect(&wd, &v);
            if refined >= defect {
                break;
            }
            defect = refined;
            newton += 1;
        }
        if defect > BASIS_DEFECT_TOL {
            return Err(Error::NonDiagonalizable {
                defect,
                tolerance: BASIS_DEFECT_TOL,
            });
        }
        basis_defect = defect;
        left_dagger = Some(wd);
    }
    let left_dagger = left_dagger.unwrap();

    let condition = match (v.opnorm_one(), left_dagger.opnorm_one()) {
        (Ok(nv), Ok(nw)) => nv * nw,
        _ => f64::INFINITY,
    };
    if condition > CONDITION_WARN {
        log::warn!(
            "eigenbasis condition estimate {condition:.3e}; steady-state accuracy may degrade"
        );
    }

    let lam_scale = eigenvalues.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let tol = stability_tol.unwrap_or(1e-12 * lam_scale.max(f64::MIN_POSITIVE));
    let re: Vec<f64> = eigenvalues.iter().map(|z| z.re).collect();
    let im: Vec<f64> = eigenvalues.iter().map(|z| z.im).collect();
    for p in 0..n {
        for q in 0..n {
            let sum_re = re[p] + re[q];
            let diff_im = im[p] - im[q];
            let magnitude = (sum_re * sum_re + diff_im * diff_im).sqrt();
            if magnitude <= tol {
                return Err(Error::NonDissipativePair {
                    p,
                    q,
                    magnitude,
                    tolerance: tol,
                });
            }
        }
    }

    let mut delta = Array2::<C64>::zeros((n, n));
    for p in 0..n {
        for q in 0..n {
            delta[(p, q)] = -1.0 / C64::new(re[p] + re[q], im[p] - im[q]);
        }
    }
    let gram = linalg::pivoted_cholesky(&delta.view(), GRAM_REL_TOL);

    Ok(SpectralData {
        eigenvalues,
        right_vectors: v,
        left_dagger,
        delta,
        gram,
        stability_tol: tol,
        condition,
        basis_defect,
        symmetric_path,
    })
}

fn transpose_defect(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).norm());
        }
    }
    worst
}

/// Rescale eigenvector columns to `v^T v = 1`; `None` when a column has a
/// (numerically) isotropic direction, which sends the symmetric path to the
/// general inversion fallback.
fn transpose_normalize(v: &Array2<C64>) -> Option<Array2<C64>> {
    let (n, cols) = v.dim();
    let mut out = v.clone();
    for c in 0..cols {
        let mut q = C64::new(0.0, 0.0);
        for i in 0..n {
            let z = out[(i, c)];
            q += z * z;
        }
        if q.norm() < 1e-12 {
            return None;
        }
        let scale = 1.0 / q.sqrt();
        for i in 0..n {
            out[(i, c)] *= scale;
        }
    }
    Some(out)
}

fn biortho_defect(wd: &Array2<C64>, v: &Array2<C64>) -> f64 {
    let n = v.nrows();
    let prod = wd.dot(v);
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            };
            worst = worst.max((prod[(i, j)] - target).norm());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::brute_force_steady_state;
    use crate::model::build_long_range_chain;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn single_mode_kernel() {
        // A = [[-g/2]]: lambda = -g/2, Delta = [[1/g]], steady state
        // V (Delta o (W^dag Gp W)) V^dag = gp / g.
        let (gp, gm) = (0.7, 0.3);
        let model = NetworkModel::new(
            Array2::zeros((1, 1)),
            array![[c(gp, 0.0)]],
            array![[c(gm, 0.0)]],
            array![[0.0]],
        )
        .unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        assert!((spec.eigenvalues[0] - c(-0.5, 0.0)).norm() < 1e-15);
        assert!((spec.delta[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        let x = spec.lyapunov_solve(&model.gamma_plus.view());
        assert!((x[(0, 0)].re - 0.7).abs() < 1e-14);
    }

    #[test]
    fn lyapunov_matches_brute_force_without_dephasing() {
        let model = build_long_range_chain(5, 1.0, 1.3, 0.9, 0.6, 0.0).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        let x = spec.lyapunov_solve(&model.gamma_plus.view());
        let oracle = brute_force_steady_state(&model).unwrap();
        let diff = linalg::max_abs(&(&x - oracle.matrix()).view());
        assert!(diff < 1e-12, "diff {diff}");
        assert!(spec.symmetric_path, "chain generator is complex symmetric");
    }

    #[test]
    fn general_path_matches_brute_force() {
        // Complex hopping phase breaks A = A^T, forcing the inversion path.
        let hopping = array![
            [c(0.0, 0.0), c(0.6, 0.4), c(0.0, 0.0)],
            [c(0.6, -0.4), c(0.2, 0.0), c(1.0, -0.3)],
            [c(0.0, 0.0), c(1.0, 0.3), c(-0.1, 0.0)]
        ];
        let mut gp = Array2::<C64>::zeros((3, 3));
        gp[(0, 0)] = c(0.8, 0.0);
        let mut gm = Array2::<C64>::zeros((3, 3));
        gm[(2, 2)] = c(0.5, 0.0);
        let model = NetworkModel::new(hopping, gp, gm, Array2::zeros((3, 3))).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        assert!(!spec.symmetric_path);
        let x = spec.lyapunov_solve(&model.gamma_plus.view());
        let oracle = brute_force_steady_state(&model).unwrap();
        let diff = linalg::max_abs(&(&x - oracle.matrix()).view());
        assert!(diff < 1e-11, "diff {diff}");
    }

    #[test]
    fn delta_is_hermitian_and_low_rank_under_strong_dephasing() {
        let model = build_long_range_chain(48, 1.0, 1.5, 1.0, 1.0, 1e3).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        assert!(linalg::hermiticity_defect(&spec.delta.view()) < 1e-12);
        // Strong uniform decay compresses the pair kernel dramatically.
        assert!(spec.gram_rank() <= 8, "rank {}", spec.gram_rank());
        let rebuilt = spec
            .gram
            .factor
            .dot(&linalg::dagger(&spec.gram.factor.view()));
        let defect = linalg::max_abs(&(&spec.delta - &rebuilt).view());
        let scale = linalg::max_abs(&spec.delta.view());
        assert!(defect < 1e-12 * scale.max(1.0), "defect {defect}");
    }

    #[test]
    fn closed_system_is_rejected() {
        // No dissipation at all: every eigenvalue is purely imaginary, so
        // the pair kernel diverges.
        let model = NetworkModel::new(
            array![[c(0.0, 0.0), c(1.0, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]],
            Array2::zeros((2, 2)),
            Array2::zeros((2, 2)),
            Array2::zeros((2, 2)),
        )
        .unwrap();
        match decompose(&effective_hamiltonian(&model), None) {
            Err(Error::NonDissipativePair { .. }) => {}
            other => panic!("expected NonDissipativePair, got {other:?}"),
        }
    }

    #[test]
    fn stability_tol_override_is_respected() {
        let model = build_long_range_chain(4, 1.0, 2.0, 1e-6, 1e-6, 0.0).unwrap();
        // Decay rates are ~1e-6; an absurdly large threshold must reject.
        match decompose(&effective_hamiltonian(&model), Some(1.0)) {
            Err(Error::NonDissipativePair { tolerance, .. }) => {
                assert_eq!(tolerance, 1.0)
            }
            other => panic!("expected NonDissipativePair, got {other:?}"),
        }
    }

    #[test]
    fn condition_is_modest_for_weakly_driven_chain() {
        let model = build_long_range_chain(12, 1.0, 1.5, 0.1, 0.1, 0.0).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        assert!(spec.condition < 1e4, "condition {}", spec.condition);
        assert!(spec.basis_defect < 1e-11);
    }
}
