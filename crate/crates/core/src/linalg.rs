//! Small dense linear-algebra helpers used across the crate.
//!
//! Everything here works on `ndarray` arrays of `Complex64` and stays
//! allocation-light; the heavy lifting (GEMM, eigensolvers, LU) is done by
//! BLAS/LAPACK through `ndarray-linalg`.

use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64 as C64;

extern "C" {
    fn openblas_set_num_threads(num_threads: i32);
}

/// Set the number of BLAS worker threads for subsequent calls.
///
/// The solver parallelizes over independent matrix blocks itself, so it pins
/// BLAS to one thread during those phases to avoid oversubscription.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) }
}

/// Conjugate transpose.
pub fn dagger(a: &ArrayView2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

/// Symmetrize in the Hermitian sense: (a + a^dagger) / 2.
pub fn hermitize(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[(i, j)] = 0.5 * (a[(i, j)] + a[(j, i)].conj());
        }
    }
    out
}

/// Largest absolute deviation from Hermiticity, max |a - a^dagger|.
pub fn hermiticity_defect(a: &ArrayView2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Largest entry magnitude.
pub fn max_abs(a: &ArrayView2<C64>) -> f64 {
    a.iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// Frobenius norm.
pub fn fro_norm(a: &ArrayView2<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// True if every entry is finite.
pub fn all_finite(a: &ArrayView2<C64>) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Compensated (Kahan) accumulator for long real sums.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Column-major stacking of a matrix into a vector.
pub fn vectorize(a: &ArrayView2<C64>) -> Array1<C64> {
    let (n, m) = a.dim();
    let mut v = Array1::zeros(n * m);
    for j in 0..m {
        for i in 0..n {
            v[i + j * n] = a[(i, j)];
        }
    }
    v
}

/// Inverse of [`vectorize`] for an `n x n` matrix.
pub fn unvectorize(n: usize, v: &Array1<C64>) -> Array2<C64> {
    assert_eq!(v.len(), n * n, "vector length must be n^2");
    let mut a = Array2::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            a[(i, j)] = v[i + j * n];
        }
    }
    a
}

/// Kronecker product with the row-major pairing (A x B)[(ia,ib),(ja,jb)] =
/// A[ia,ja] B[ib,jb], the convention under which vec(A X B) =
/// (B^T kron A) vec(X) for column-major vec.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ma, na) = a.dim();
    let (mb, nb) = b.dim();
    let mut out = Array2::zeros((ma * mb, na * nb));
    for ia in 0..ma {
        for ja in 0..na {
            let aij = a[(ia, ja)];
            if aij == C64::new(0.0, 0.0) {
                continue;
            }
            for ib in 0..mb {
                for jb in 0..nb {
                    out[(ia * mb + ib, ja * nb + jb)] = aij * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Low-rank Hermitian factorization produced by [`pivoted_cholesky`].
#[derive(Clone, Debug)]
pub struct LowRankFactor {
    /// `n x rank` factor `P` with `A ~ P P^dagger` in the original ordering.
    pub factor: Array2<C64>,
    /// Numerical rank at the requested tolerance.
    pub rank: usize,
}

/// Pivoted Cholesky factorization of a Hermitian positive semidefinite
/// matrix, truncated when the largest remaining diagonal falls below
/// `rel_tol` times the largest initial diagonal.
///
/// Pivoting on the diagonal keeps the factorization stable for rank-deficient
/// input; the returned factor satisfies `max |A - P P^dagger| <= O(rel_tol) *
/// max diag A`. Cost is `O(rank * n^2)`.
pub fn pivoted_cholesky(a: &ArrayView2<C64>, rel_tol: f64) -> LowRankFactor {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "pivoted_cholesky needs a square matrix");
    let mut work = a.to_owned();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut low = Array2::<C64>::zeros((n, n));

    let initial_max = (0..n).fold(0.0f64, |m, i| m.max(work[(i, i)].re));
    let tol = rel_tol * initial_max.max(f64::MIN_POSITIVE);

    let mut rank = 0;
    for k in 0..n {
        let mut piv = k;
        let mut dmax = work[(k, k)].re;
        for i in (k + 1)..n {
            let d = work[(i, i)].re;
            if d > dmax {
                dmax = d;
                piv = i;
            }
        }
        if dmax <= tol {
            break;
        }
        if piv != k {
            perm.swap(k, piv);
            swap_rows_cols(&mut work, k, piv);
            for c in 0..k {
                let tmp = low[(k, c)];
                low[(k, c)] = low[(piv, c)];
                low[(piv, c)] = tmp;
            }
        }
        let d = dmax.sqrt();
        low[(k, k)] = C64::new(d, 0.0);
        for i in (k + 1)..n {
            low[(i, k)] = work[(i, k)] / d;
        }
        for i in (k + 1)..n {
            let lik = low[(i, k)];
            for j in (k + 1)..=i {
                let delta = lik * low[(j, k)].conj();
                work[(i, j)] -= delta;
                if j != i {
                    work[(j, i)] -= delta.conj();
                }
            }
        }
        rank = k + 1;
    }

    let mut factor = Array2::<C64>::zeros((n, rank));
    for i in 0..n {
        for c in 0..rank {
            factor[(perm[i], c)] = low[(i, c)];
        }
    }
    LowRankFactor { factor, rank }
}

fn swap_rows_cols(a: &mut Array2<C64>, i: usize, j: usize) {
    let n = a.nrows();
    for c in 0..n {
        let tmp = a[(i, c)];
        a[(i, c)] = a[(j, c)];
        a[(j, c)] = tmp;
    }
    for r in 0..n {
        let tmp = a[(r, i)];
        a[(r, i)] = a[(r, j)];
        a[(r, j)] = tmp;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn vectorize_is_column_major() {
        let a = array![[c(1.0, 0.0), c(3.0, 0.0)], [c(2.0, 0.0), c(4.0, 0.0)]];
        let v = vectorize(&a.view());
        assert_eq!(v.to_vec(), vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0), c(4.0, 0.0)]);
        let b = unvectorize(2, &v);
        assert_eq!(a, b);
    }

    #[test]
    fn kron_matches_vec_identity() {
        // vec(A X B) == (B^T kron A) vec(X) for random-ish fixed matrices.
        let a = array![[c(1.0, 0.5), c(0.0, -1.0)], [c(2.0, 0.0), c(0.3, 0.7)]];
        let x = array![[c(0.2, 0.1), c(1.0, 0.0)], [c(-0.4, 0.0), c(0.0, 0.9)]];
        let b = array![[c(0.5, 0.0), c(1.5, -0.5)], [c(0.0, 2.0), c(1.0, 1.0)]];
        let left = vectorize(&a.dot(&x).dot(&b).view());
        let bt = b.t().to_owned();
        let op = kron(&bt.view(), &a.view());
        let right = op.dot(&vectorize(&x.view()));
        for (l, r) in left.iter().zip(right.iter()) {
            assert!((l - r).norm() < 1e-12);
        }
    }

    #[test]
    fn hermitize_fixes_small_defects() {
        let mut a = array![[c(1.0, 1e-13), c(0.5, 0.5)], [c(0.5, -0.5), c(2.0, 0.0)]];
        a[(0, 1)] += c(1e-13, 0.0);
        let h = hermitize(&a);
        assert!(hermiticity_defect(&h.view()) < 1e-15);
    }

    #[test]
    fn pivoted_cholesky_recovers_low_rank() {
        // Build a rank-2 PSD matrix from two fixed complex vectors.
        let n = 6;
        let mut g = Array2::<C64>::zeros((n, 2));
        for i in 0..n {
            g[(i, 0)] = c((i as f64 * 0.3).cos(), (i as f64 * 0.7).sin());
            g[(i, 1)] = c((i as f64 * 1.1).sin(), 0.2 * i as f64);
        }
        let a = g.dot(&dagger(&g.view()));
        let lr = pivoted_cholesky(&a.view(), 1e-12);
        assert_eq!(lr.rank, 2);
        let rebuilt = lr.factor.dot(&dagger(&lr.factor.view()));
        let defect = max_abs(&(&a - &rebuilt).view());
        assert!(defect < 1e-10, "defect {defect}");
    }

    #[test]
    fn pivoted_cholesky_full_rank_identity() {
        let n = 5;
        let a = Array2::<C64>::eye(n);
        let lr = pivoted_cholesky(&a.view(), 1e-15);
        assert_eq!(lr.rank, n);
        let rebuilt = lr.factor.dot(&dagger(&lr.factor.view()));
        assert!(max_abs(&(&a - &rebuilt).view()) < 1e-14);
    }

    #[test]
    fn kahan_handles_adversarial_sum() {
        let mut k = KahanSum::new();
        k.add(1.0);
        for _ in 0..10 {
            k.add(1e-16);
        }
        assert!((k.value() - (1.0 + 1e-15)).abs() < 1e-17);
    }
}
