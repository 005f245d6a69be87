//! Seeded random model generators shared by tests and benchmarks.
//!
//! Everything is driven by an explicit RNG so callers get reproducible
//! instances; [`rng`] fixes the generator to one with a stable stream
//! across platforms.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::NetworkModel;

/// Deterministic RNG for a given seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shape of the dephasing matrix in a random model, chosen to exercise
/// each solver dispatch path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SigmaKind {
    /// No dephasing at all.
    Zero,
    /// Positive rate on every site.
    Onsite,
    /// Positive rates on a random subset of sites.
    OnsiteSubset,
    /// Full positive-semidefinite symmetric rate matrix.
    Dense,
}

fn random_complex(rng: &mut impl Rng) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn random_hermitian(n: usize, rng: &mut impl Rng) -> Array2<C64> {
    let a = Array2::from_shape_fn((n, n), |_| random_complex(rng));
    let mut h = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] = a[(i, j)] + a[(j, i)].conj();
        }
    }
    h
}

/// Wishart-style positive-semidefinite Hermitian matrix `R R^dag / n`.
fn random_psd(n: usize, rng: &mut impl Rng) -> Array2<C64> {
    let r = Array2::from_shape_fn((n, n), |_| random_complex(rng));
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += r[(i, k)] * r[(j, k)].conj();
            }
            m[(i, j)] = acc / n as f64;
        }
    }
    m
}

fn random_sigma(n: usize, kind: SigmaKind, rng: &mut impl Rng) -> Array2<f64> {
    match kind {
        SigmaKind::Zero => Array2::zeros((n, n)),
        SigmaKind::Onsite => {
            Array2::from_diag(&ndarray::Array1::from_shape_fn(n, |_| {
                rng.gen_range(0.1..3.0)
            }))
        }
        SigmaKind::OnsiteSubset => {
            let mut s = Array2::zeros((n, n));
            let mut any = false;
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    s[(i, i)] = rng.gen_range(0.1..3.0);
                    any = true;
                }
            }
            // Keep the subset nonempty so the kind stays distinct from Zero.
            if !any {
                let i = rng.gen_range(0..n);
                s[(i, i)] = rng.gen_range(0.1..3.0);
            }
            s
        }
        SigmaKind::Dense => {
            let r = Array2::from_shape_fn((n, n), |_| rng.gen_range(0.1..1.0));
            let mut s = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += r[(i, k)] * r[(j, k)];
                    }
                    s[(i, j)] = acc / n as f64;
                    s[(j, i)] = s[(i, j)];
                }
            }
            s
        }
    }
}

/// Random valid model: generic Hermitian hopping, Wishart gain and loss,
/// and the requested dephasing shape. Always passes validation.
pub fn random_model(n: usize, sigma: SigmaKind, rng: &mut impl Rng) -> NetworkModel {
    let hopping = random_hermitian(n, rng);
    let gamma_plus = random_psd(n, rng);
    let gamma_minus = random_psd(n, rng);
    let sigma = random_sigma(n, sigma, rng);
    NetworkModel::new(hopping, gamma_plus, gamma_minus, sigma)
        .expect("construction is valid by design")
}

/// Random physical correlation matrix: Hermitian with eigenvalues in
/// `[0, 1]` (normalized so the trace is one).
pub fn random_state(n: usize, rng: &mut impl Rng) -> Array2<C64> {
    let r = Array2::from_shape_fn((n, n), |_| random_complex(rng));
    let mut c: Array2<C64> = Array2::zeros((n, n));
    let mut trace = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut acc = C64::new(0.0, 0.0);
            for k in 0..n {
                acc += r[(i, k)] * r[(j, k)].conj();
            }
            c[(i, j)] = acc;
        }
        trace += c[(i, i)].re;
    }
    // lambda_max <= trace for a PSD matrix, so this bounds eigenvalues by 1.
    c.mapv_into(|z| z / trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{dephasing_pattern, PatternKind};
    use ndarray_linalg::{Eigh, UPLO};

    #[test]
    fn generators_are_reproducible() {
        let a = random_model(6, SigmaKind::Dense, &mut rng(7));
        let b = random_model(6, SigmaKind::Dense, &mut rng(7));
        assert_eq!(a.hopping, b.hopping);
        assert_eq!(a.sigma, b.sigma);
    }

    #[test]
    fn sigma_kinds_map_to_expected_patterns() {
        let mut r = rng(11);
        let zero = random_model(5, SigmaKind::Zero, &mut r);
        assert_eq!(dephasing_pattern(&zero.sigma.view(), 0.0).kind, PatternKind::None);
        let onsite = random_model(5, SigmaKind::Onsite, &mut r);
        assert_eq!(
            dephasing_pattern(&onsite.sigma.view(), 0.0).kind,
            PatternKind::OnsiteAll
        );
        let subset = random_model(5, SigmaKind::OnsiteSubset, &mut r);
        let kind = dephasing_pattern(&subset.sigma.view(), 0.0).kind;
        assert!(kind == PatternKind::OnsiteSubset || kind == PatternKind::OnsiteAll);
        let dense = random_model(5, SigmaKind::Dense, &mut r);
        assert_eq!(
            dephasing_pattern(&dense.sigma.view(), 0.0).kind,
            PatternKind::General
        );
    }

    #[test]
    fn random_state_is_a_valid_correlation_matrix() {
        let c = random_state(8, &mut rng(3));
        let (eigs, _) = c.eigh(UPLO::Lower).unwrap();
        for &e in eigs.iter() {
            assert!(e >= -1e-12 && e <= 1.0 + 1e-12, "eigenvalue {e} out of range");
        }
    }
}
