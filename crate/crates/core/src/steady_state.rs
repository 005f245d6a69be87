//! Steady-state solver.
//!
//! Without dephasing the stationary correlation matrix is a single spectral
//! Lyapunov solve. Dephasing feeds the state back into its own source term,
//! `S = Gp + sigma o C`, so only the entries of `C` on the nonzero pattern
//! of `sigma` enter the feedback. The solver therefore closes a linear
//! system on those `n_sigma` entries (the restricted system), solves it
//! densely, and reconstructs the full matrix with one more Lyapunov solve.
//!
//! The restricted superoperator column for a source entry `E_(m,m')` never
//! needs the full `n^2 x n^2` map: with the low-rank factor `Delta ~ P
//! P^dagger` the response reduces to products of `n x rank` panels, which
//! is what makes `n = 4096` with full onsite dephasing tractable on one
//! machine.
//!
//! Every solve ends with an independent residual measurement against the
//! reference right-hand side from [`crate::dynamics`], optionally followed
//! by defect-correction refinement that reuses the factored restricted
//! system. Reports carry strategy, predicted cost, timings, residuals, and
//! the convention tag so results remain auditable.

use std::time::Instant;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, FactorizeInto, LUFactorized, OperationNorm, ReciprocalConditionNum,
    Solve, UPLO};
use ndarray::OwnedRepr;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::eom_rhs;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{dephasing_pattern, validate_model, DephasingPattern, NetworkModel, PatternKind};
use crate::spectral::{decompose, effective_hamiltonian, SpectralData, SIGN_CONVENTION};

/// Environment variable providing the default worker count.
pub const WORKERS_ENV: &str = "NESS_WORKERS";

/// Relative stationarity target: the solution is accepted when the
/// equation-of-motion residual satisfies `|R|_F <= 1e-10 * |Gp|_F`.
pub const RESIDUAL_REL_TARGET: f64 = 1e-10;

/// Row-chunk size for parallel formation. Fixed (not derived from the
/// worker count) so results are bit-identical for any pool size.
const FORMATION_CHUNK: usize = 128;

/// Hermitian correlation matrix with a physical occupation spectrum.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    matrix: Array2<C64>,
}

impl CorrelationMatrix {
    /// Wrap a matrix that is already known to be a valid state.
    pub fn new_unchecked(matrix: Array2<C64>) -> Self {
        Self { matrix }
    }

    /// Validate Hermiticity and that all eigenvalues lie in
    /// `[-eig_tol, 1 + eig_tol]`, then wrap (hermitized to kill roundoff).
    ///
    /// Solver output is checked with a tight tolerance (1e-8); trajectory
    /// snapshots use a looser one since integration error is larger.
    pub fn checked(matrix: Array2<C64>, eig_tol: f64) -> Result<Self> {
        let scale = linalg::max_abs(&matrix.view()).max(1.0);
        let herm = linalg::hermiticity_defect(&matrix.view());
        if herm > 1e-10 * scale {
            return Err(Error::ConsistencyFailure {
                context: "correlation matrix hermiticity".to_string(),
                defect: herm,
                tolerance: 1e-10 * scale,
            });
        }
        let matrix = linalg::hermitize(&matrix);
        let (vals, _) = matrix
            .eigh(UPLO::Lower)
            .map_err(|e| Error::InvalidInput(format!("eigensolve failed: {e}")))?;
        let min = vals.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        let max = vals.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        if min < -eig_tol || max > 1.0 + eig_tol {
            let worst = if min < -eig_tol { -min } else { max - 1.0 };
            return Err(Error::ConsistencyFailure {
                context: format!("occupation spectrum [{min:.3e}, {max:.3e}] outside [0, 1]"),
                defect: worst,
                tolerance: eig_tol,
            });
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.matrix
    }

    pub fn n_modes(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Which route the solver takes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyTag {
    /// No dephasing: one Lyapunov solve.
    LyapunovOnly,
    /// Restricted system formed column-by-column through low-rank panels.
    RestrictedPerElement,
    /// Restricted system formed by materializing each full response map.
    RestrictedViaFull,
    /// Dense vectorized solve; only used by the brute-force oracle.
    FullVectorized,
}

impl std::fmt::Display for StrategyTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StrategyTag::LyapunovOnly => "lyapunov_only",
            StrategyTag::RestrictedPerElement => "restricted_per_element",
            StrategyTag::RestrictedViaFull => "restricted_via_full",
            StrategyTag::FullVectorized => "full_vectorized",
        };
        f.write_str(s)
    }
}

/// A chosen route plus its a-priori floating point cost model.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SolveStrategy {
    pub tag: StrategyTag,
    pub predicted_cost: f64,
}

fn strategy_cost(tag: StrategyTag, n: usize, n_sigma: usize) -> f64 {
    let nf = n as f64;
    let sf = n_sigma as f64;
    match tag {
        StrategyTag::LyapunovOnly => nf.powi(3),
        StrategyTag::RestrictedPerElement => (sf * sf * nf * nf).max(sf.powi(3)).max(nf.powi(3)),
        StrategyTag::RestrictedViaFull => nf.powi(5).max(sf.powi(3)).max(nf.powi(3)),
        StrategyTag::FullVectorized => nf.powi(6),
    }
}

/// Pick the cheapest route for a problem of size `n_modes` with `n_sigma`
/// nonzero dephasing entries.
///
/// Per-element formation costs `n_sigma^2 n^2`, forming each column through
/// a full map costs `n^5`; the dense restricted solve adds `n_sigma^3` and
/// the surrounding Lyapunov solves `n^3`. The cheaper formation wins, so
/// per-element is selected exactly when `n_sigma^2 < n^3`.
pub fn choose_strategy(n_modes: usize, n_sigma: usize) -> SolveStrategy {
    let tag = if n_sigma == 0 {
        StrategyTag::LyapunovOnly
    } else if (n_sigma as f64) * (n_sigma as f64) < (n_modes as f64).powi(3) {
        StrategyTag::RestrictedPerElement
    } else {
        StrategyTag::RestrictedViaFull
    };
    SolveStrategy {
        tag,
        predicted_cost: strategy_cost(tag, n_modes, n_sigma),
    }
}

/// Tunable knobs for [`solve_steady_state`].
#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Worker threads for formation; `None` means use the `NESS_WORKERS`
    /// environment variable if set, else the rayon default. Results are
    /// bit-identical for any worker count.
    pub workers: Option<usize>,
    /// Budget in bytes for the dense restricted superoperator.
    pub memory_budget: u64,
    /// Override for the dissipative-pair threshold.
    pub stability_tol: Option<f64>,
    /// Dephasing entries with magnitude at or below this are structural
    /// zeros.
    pub zero_tol: f64,
    /// Tolerance for the final occupation-spectrum check.
    pub eig_tol: f64,
    /// Maximum number of defect-correction refinement passes.
    pub refine_max: usize,
    /// Force a specific restricted formation route (testing/benchmarks).
    pub force_strategy: Option<StrategyTag>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        let workers = std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&w| w > 0);
        Self {
            workers,
            memory_budget: 3 * 1024 * 1024 * 1024,
            stability_tol: None,
            zero_tol: 0.0,
            eig_tol: 1e-8,
            refine_max: 2,
            force_strategy: None,
        }
    }
}

/// Wall-clock seconds spent in each phase.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub decompose: f64,
    pub formation: f64,
    pub solve: f64,
    pub complete: f64,
    pub refine: f64,
    pub total: f64,
}

/// Everything worth knowing about how a solve went.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub strategy: StrategyTag,
    pub predicted_cost: f64,
    pub n_modes: usize,
    pub n_sigma: usize,
    pub pattern: PatternKind,
    /// Numerical rank of the pair-kernel factor actually used.
    pub delta_rank: usize,
    /// One-norm condition estimate of the eigenbasis.
    pub condition: f64,
    pub basis_defect: f64,
    /// Condition estimate of the restricted system, when one was solved.
    pub restricted_condition: Option<f64>,
    /// Final equation-of-motion residual (Frobenius norm).
    pub residual: f64,
    /// Acceptance threshold the residual was tested against.
    pub residual_target: f64,
    pub refinements: usize,
    pub timings: PhaseTimings,
    /// Convention tag, see [`crate::spectral::SIGN_CONVENTION`].
    pub convention: String,
}

/// Solver output: the state plus its report.
#[derive(Clone, Debug)]
pub struct Solution {
    pub correlation: CorrelationMatrix,
    pub report: SolveReport,
}

/// Dense action of the dephasing feedback on the restricted entries,
/// including the `sigma` scaling of the source column.
#[derive(Clone, Debug)]
pub struct RestrictedSuperoperator {
    pub pattern: DephasingPattern,
    data: RestrictedData,
}

#[derive(Clone, Debug)]
enum RestrictedData {
    /// Purely diagonal pattern: real matrix over the site list.
    Diagonal(Array2<f64>),
    /// General pattern: complex matrix over the index pairs.
    General(Array2<C64>),
}

impl RestrictedSuperoperator {
    /// Dimension of the restricted system.
    pub fn dim(&self) -> usize {
        self.pattern.n_sigma()
    }

    /// Whether the diagonal (real) representation is in use.
    pub fn is_diagonal(&self) -> bool {
        matches!(self.data, RestrictedData::Diagonal(_))
    }
}

enum RestrictedFactor {
    Real {
        lu: LUFactorized<OwnedRepr<f64>>,
        condition: f64,
    },
    Complex {
        lu: LUFactorized<OwnedRepr<C64>>,
        condition: f64,
    },
}

impl RestrictedFactor {
    fn condition(&self) -> f64 {
        match self {
            RestrictedFactor::Real { condition, .. } => *condition,
            RestrictedFactor::Complex { condition, .. } => *condition,
        }
    }
}

/// Steady state from a single Lyapunov solve: valid when the model has no
/// dephasing (the source is then state-independent).
pub fn lyapunov_steady_state(spec: &SpectralData, source: &Array2<C64>) -> Result<Array2<C64>> {
    let n = spec.n_modes();
    if source.nrows() != n || source.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "source is {}x{}, expected {n}x{n}",
            source.nrows(),
            source.ncols()
        )));
    }
    let scale = linalg::max_abs(&source.view()).max(1.0);
    let defect = linalg::hermiticity_defect(&source.view());
    if defect > 1e-10 * scale {
        return Err(Error::InvalidInput(format!(
            "source must be Hermitian, defect {defect:.3e}"
        )));
    }
    Ok(spec.lyapunov_solve(&source.view()))
}

/// Source-side weight factor `Q = diag(u) P` where `u` is column `m` of
/// `W^dagger`. The response rows are then a plain GEMM `V[rows, :] Q`, so
/// no `n x n` intermediate is ever assembled.
fn scaled_factor(spec: &SpectralData, m: usize) -> Array2<C64> {
    let (n, rank) = spec.gram.factor.dim();
    let mut q = spec.gram.factor.clone();
    for p in 0..n {
        let up = spec.left_dagger[(p, m)];
        for t in 0..rank {
            q[(p, t)] *= up;
        }
    }
    q
}

fn response_rows(spec: &SpectralData, q: &Array2<C64>, row_start: usize, row_end: usize) -> Array2<C64> {
    spec.right_vectors
        .slice(ndarray::s![row_start..row_end, ..])
        .dot(q)
}

/// Build the restricted superoperator for a purely diagonal pattern.
///
/// The response of occupation `o` to a unit diagonal source at `m` is
/// `F[o, m] = |(V o u_m) P|_row_o^2 >= 0`; for complex-symmetric
/// generators `F` is symmetric, so only a triangle is computed. The
/// sequential outer loop over sources with fixed-size row chunks inside
/// keeps the result independent of the worker count.
fn form_diagonal(
    spec: &SpectralData,
    sigma: &Array2<f64>,
    sites: &[usize],
) -> Array2<f64> {
    let k = sites.len();
    let onsite_all = k == spec.n_modes() && sites.iter().enumerate().all(|(i, &s)| i == s);
    let mut f = Array2::<f64>::zeros((k, k));

    if onsite_all && spec.symmetric_path {
        // F is exactly symmetric here, so compute the lower triangle only
        // and mirror.
        let n = spec.n_modes();
        for m in 0..n {
            let q = scaled_factor(spec, m);
            let mut column = vec![0.0f64; n - m];
            let chunks: Vec<(usize, &mut [f64])> = {
                let mut parts = Vec::new();
                let mut rest = column.as_mut_slice();
                let mut start = m;
                while !rest.is_empty() {
                    let take = rest.len().min(FORMATION_CHUNK);
                    let (head, tail) = rest.split_at_mut(take);
                    parts.push((start, head));
                    start += take;
                    rest = tail;
                }
                parts
            };
            rayon::scope(|s| {
                for (start, chunk) in chunks {
                    let q = &q;
                    s.spawn(move |_| {
                        let y = response_rows(spec, q, start, start + chunk.len());
                        for (i, out) in chunk.iter_mut().enumerate() {
                            *out = y.row(i).iter().map(|z| z.norm_sqr()).sum();
                        }
                    });
                }
            });
            for (i, v) in column.into_iter().enumerate() {
                f[(m + i, m)] = v;
                f[(m, m + i)] = v;
            }
        }
    } else {
        for (b, &m) in sites.iter().enumerate() {
            let q = scaled_factor(spec, m);
            // Only the site rows are needed; gather them one at a time.
            for (a, &o) in sites.iter().enumerate() {
                let y = response_rows(spec, &q, o, o + 1);
                f[(a, b)] = y.row(0).iter().map(|z| z.norm_sqr()).sum();
            }
        }
    }

    // Scale each source column by its dephasing rate.
    for (b, &m) in sites.iter().enumerate() {
        let rate = sigma[(m, m)];
        for a in 0..k {
            f[(a, b)] *= rate;
        }
    }
    f
}

/// Build the restricted superoperator for a general pattern, either through
/// low-rank panels (`per_element`) or by materializing each full response
/// map (`via_full`). Both produce the same matrix up to roundoff.
fn form_general(
    spec: &SpectralData,
    sigma: &Array2<f64>,
    pattern: &DephasingPattern,
    via_full: bool,
) -> Array2<C64> {
    let n = spec.n_modes();
    let n_sigma = pattern.n_sigma();
    let mut d = Array2::<C64>::zeros((n_sigma, n_sigma));

    // Group source pairs by their row index so the row-side panel is built
    // once per distinct m.
    let mut groups: Vec<(usize, Vec<(usize, usize)>)> = Vec::new();
    for (col, &(m, mp)) in pattern.indices.iter().enumerate() {
        match groups.last_mut() {
            Some((gm, list)) if *gm == m => list.push((col, mp)),
            _ => groups.push((m, vec![(col, mp)])),
        }
    }

    for (m, list) in groups {
        let qa = scaled_factor(spec, m);
        let a_panel = response_rows(spec, &qa, 0, n);
        for (col, mp) in list {
            let qb = scaled_factor(spec, mp);
            let b_panel = response_rows(spec, &qb, 0, n);
            let rate = C64::new(sigma[(m, mp)], 0.0);
            if via_full {
                let full = a_panel.dot(&linalg::dagger(&b_panel.view()));
                for (row, &(o, op)) in pattern.indices.iter().enumerate() {
                    d[(row, col)] = rate * full[(o, op)];
                }
            } else {
                for (row, &(o, op)) in pattern.indices.iter().enumerate() {
                    let mut acc = C64::new(0.0, 0.0);
                    for t in 0..spec.gram.rank {
                        acc += a_panel[(o, t)] * b_panel[(op, t)].conj();
                    }
                    d[(row, col)] = rate * acc;
                }
            }
        }
    }
    d
}

/// Form the restricted superoperator for the given pattern.
///
/// Fails with [`Error::MemoryBudgetExceeded`] when the dense restricted
/// matrix would not fit the budget.
pub fn form_restricted_superoperator(
    spec: &SpectralData,
    sigma: &Array2<f64>,
    pattern: &DephasingPattern,
    options: &SolveOptions,
) -> Result<RestrictedSuperoperator> {
    let n_sigma = pattern.n_sigma() as u64;
    let diagonal_kind = matches!(
        pattern.kind,
        PatternKind::OnsiteAll | PatternKind::OnsiteSubset
    );
    let via_full = matches!(options.force_strategy, Some(StrategyTag::RestrictedViaFull))
        || (options.force_strategy.is_none()
            && matches!(
                choose_strategy(spec.n_modes(), pattern.n_sigma()).tag,
                StrategyTag::RestrictedViaFull
            ));
    let use_diagonal = diagonal_kind && !via_full;

    let entry_bytes: u64 = if use_diagonal { 8 } else { 16 };
    let required = n_sigma * n_sigma * entry_bytes;
    if required > options.memory_budget {
        return Err(Error::MemoryBudgetExceeded {
            required,
            budget: options.memory_budget,
        });
    }

    let data = if use_diagonal {
        let sites = pattern.sites().expect("diagonal pattern has sites");
        RestrictedData::Diagonal(form_diagonal(spec, sigma, &sites))
    } else {
        RestrictedData::General(form_general(spec, sigma, pattern, via_full))
    };
    Ok(RestrictedSuperoperator {
        pattern: pattern.clone(),
        data,
    })
}

fn factorize_restricted(sup: &RestrictedSuperoperator) -> Result<RestrictedFactor> {
    match &sup.data {
        RestrictedData::Diagonal(d) => {
            let k = d.nrows();
            let mut system = Array2::<f64>::eye(k);
            system -= d;
            let anorm = system
                .opnorm_one()
                .map_err(|e| Error::InvalidInput(format!("norm failed: {e}")))?;
            let lu = system
                .factorize_into()
                .map_err(|_| Error::SingularSystem {
                    condition: f64::INFINITY,
                })?;
            let rcond = lu.rcond().map_err(|_| Error::SingularSystem {
                condition: f64::INFINITY,
            })?;
            if rcond < 1e-14 {
                return Err(Error::SingularSystem {
                    condition: 1.0 / rcond.max(f64::MIN_POSITIVE),
                });
            }
            let _ = anorm;
            Ok(RestrictedFactor::Real {
                lu,
                condition: 1.0 / rcond,
            })
        }
        RestrictedData::General(d) => {
            let k = d.nrows();
            let mut system = Array2::<C64>::eye(k);
            system -= d;
            let lu = system
                .factorize_into()
                .map_err(|_| Error::SingularSystem {
                    condition: f64::INFINITY,
                })?;
            let rcond = lu.rcond().map_err(|_| Error::SingularSystem {
                condition: f64::INFINITY,
            })?;
            if rcond < 1e-14 {
                return Err(Error::SingularSystem {
                    condition: 1.0 / rcond.max(f64::MIN_POSITIVE),
                });
            }
            Ok(RestrictedFactor::Complex {
                lu,
                condition: 1.0 / rcond,
            })
        }
    }
}

fn extract_restricted(pattern: &DephasingPattern, full: &Array2<C64>) -> Array1<C64> {
    let mut out = Array1::<C64>::zeros(pattern.n_sigma());
    for (k, &(i, j)) in pattern.indices.iter().enumerate() {
        out[k] = full[(i, j)];
    }
    out
}

fn solve_with_factor(factor: &RestrictedFactor, rhs: &Array1<C64>) -> Result<Array1<C64>> {
    match factor {
        RestrictedFactor::Real { lu, .. } => {
            let re = rhs.mapv(|z| z.re);
            let sol = lu.solve(&re).map_err(|_| Error::SingularSystem {
                condition: f64::INFINITY,
            })?;
            Ok(sol.mapv(|x| C64::new(x, 0.0)))
        }
        RestrictedFactor::Complex { lu, .. } => {
            lu.solve(rhs).map_err(|_| Error::SingularSystem {
                condition: f64::INFINITY,
            })
        }
    }
}

/// Solve the restricted fixed-point system `(I - D) c = c_source`.
///
/// `c_source` must be aligned with `superoperator.pattern.indices`. This is
/// the one-shot public entry point; the pipeline keeps the factorization
/// around to reuse it during refinement.
pub fn solve_restricted(
    superoperator: &RestrictedSuperoperator,
    c_source: &Array1<C64>,
) -> Result<Array1<C64>> {
    if c_source.len() != superoperator.dim() {
        return Err(Error::InvalidInput(format!(
            "restricted source has length {}, pattern has {}",
            c_source.len(),
            superoperator.dim()
        )));
    }
    let factor = factorize_restricted(superoperator)?;
    solve_with_factor(&factor, c_source)
}

/// Spread restricted entries back into a sparse Hermitian source term
/// `sigma o C` limited to the pattern.
fn scatter_source(
    pattern: &DephasingPattern,
    sigma: &Array2<f64>,
    restricted: &Array1<C64>,
    n: usize,
) -> Array2<C64> {
    let mut s = Array2::<C64>::zeros((n, n));
    for (k, &(i, j)) in pattern.indices.iter().enumerate() {
        s[(i, j)] = C64::new(sigma[(i, j)], 0.0) * restricted[k];
    }
    linalg::hermitize(&s)
}

/// Rebuild the full correlation matrix from the restricted solution and
/// verify that the restriction reproduces itself.
pub fn complete_correlation_matrix(
    spec: &SpectralData,
    model: &NetworkModel,
    pattern: &DephasingPattern,
    restricted: &Array1<C64>,
) -> Result<Array2<C64>> {
    complete_with_source(spec, &model.sigma, pattern, restricted, &model.gamma_plus)
}

fn complete_with_source(
    spec: &SpectralData,
    sigma: &Array2<f64>,
    pattern: &DephasingPattern,
    restricted: &Array1<C64>,
    base_source: &Array2<C64>,
) -> Result<Array2<C64>> {
    let n = spec.n_modes();
    if restricted.len() != pattern.n_sigma() {
        return Err(Error::InvalidInput(format!(
            "restricted solution has length {}, pattern has {}",
            restricted.len(),
            pattern.n_sigma()
        )));
    }
    let source = base_source + &scatter_source(pattern, sigma, restricted, n);
    let full = spec.lyapunov_solve(&source.view());
    let back = extract_restricted(pattern, &full);
    let scale = restricted
        .iter()
        .fold(0.0f64, |m, z| m.max(z.norm()))
        .max(1.0);
    let defect = back
        .iter()
        .zip(restricted.iter())
        .fold(0.0f64, |m, (b, r)| m.max((b - r).norm()));
    let tolerance = 1e-8 * scale;
    if defect > tolerance {
        return Err(Error::ConsistencyFailure {
            context: "restricted entries do not reproduce themselves".to_string(),
            defect,
            tolerance,
        });
    }
    Ok(full)
}

/// Solve `A X + X A^dagger + sigma o X + S = 0` for a given Hermitian `S`,
/// reusing the spectral data and the factored restricted system.
fn solve_affine(
    spec: &SpectralData,
    sigma: &Array2<f64>,
    pattern: &DephasingPattern,
    factor: Option<&RestrictedFactor>,
    s: &Array2<C64>,
) -> Result<Array2<C64>> {
    let base = spec.lyapunov_solve(&s.view());
    match factor {
        None => Ok(base),
        Some(factor) => {
            let rhs = extract_restricted(pattern, &base);
            let restricted = solve_with_factor(factor, &rhs)?;
            complete_with_source(spec, sigma, pattern, &restricted, s)
        }
    }
}

/// Steady state with default options, returning just the state.
pub fn steady_state(model: &NetworkModel) -> Result<CorrelationMatrix> {
    solve_steady_state(model, &SolveOptions::default()).map(|s| s.correlation)
}

/// Full steady-state pipeline: validate, decompose, form and solve the
/// restricted system, complete, refine, and check stationarity.
pub fn solve_steady_state(model: &NetworkModel, options: &SolveOptions) -> Result<Solution> {
    let t_total = Instant::now();
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let n = model.n_modes();
    let pattern = dephasing_pattern(&model.sigma.view(), options.zero_tol);
    let n_sigma = pattern.n_sigma();

    let strategy = match options.force_strategy {
        None => choose_strategy(n, n_sigma),
        Some(tag) => {
            match tag {
                StrategyTag::FullVectorized => {
                    return Err(Error::InvalidInput(
                        "full_vectorized is the oracle route; use dynamics::brute_force_steady_state"
                            .to_string(),
                    ))
                }
                StrategyTag::LyapunovOnly if n_sigma > 0 => {
                    return Err(Error::InvalidInput(
                        "cannot force lyapunov_only on a model with dephasing".to_string(),
                    ))
                }
                _ => {}
            }
            let tag = if n_sigma == 0 { StrategyTag::LyapunovOnly } else { tag };
            SolveStrategy {
                tag,
                predicted_cost: strategy_cost(tag, n, n_sigma),
            }
        }
    };

    let pool = match options.workers {
        Some(w) => Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(format!("worker pool: {e}")))?,
        ),
        None => None,
    };

    let t_phase = Instant::now();
    let spec = decompose(&effective_hamiltonian(model), options.stability_tol)?;
    let decompose_s = t_phase.elapsed().as_secs_f64();

    // Formation parallelizes over row chunks itself; keep BLAS single
    // threaded there and restore afterwards.
    let machine_threads = std::thread::available_parallelism()
        .map(|p| p.get())
        .unwrap_or(1);

    let t_phase = Instant::now();
    let (superop, factor) = if n_sigma == 0 {
        (None, None)
    } else {
        linalg::set_blas_threads(1);
        let sup = match &pool {
            Some(p) => p.install(|| form_restricted_superoperator(&spec, &model.sigma, &pattern, options)),
            None => form_restricted_superoperator(&spec, &model.sigma, &pattern, options),
        }?;
        linalg::set_blas_threads(machine_threads);
        let factor = factorize_restricted(&sup)?;
        (Some(sup), Some(factor))
    };
    let formation_s = t_phase.elapsed().as_secs_f64();

    let t_phase = Instant::now();
    let c_gamma = spec.lyapunov_solve(&model.gamma_plus.view());
    let restricted_solution = match &factor {
        None => None,
        Some(f) => {
            let rhs = extract_restricted(&pattern, &c_gamma);
            Some(solve_with_factor(f, &rhs)?)
        }
    };
    let solve_s = t_phase.elapsed().as_secs_f64();

    let t_phase = Instant::now();
    let mut c = match &restricted_solution {
        None => c_gamma,
        Some(r) => complete_with_source(&spec, &model.sigma, &pattern, r, &model.gamma_plus)?,
    };
    let complete_s = t_phase.elapsed().as_secs_f64();

    // Defect correction: measure the residual against the reference
    // right-hand side and push it toward the floating point floor by
    // re-solving with the residual as source.
    let t_phase = Instant::now();
    let residual_target = RESIDUAL_REL_TARGET * linalg::fro_norm(&model.gamma_plus.view());
    let mut residual = linalg::fro_norm(&eom_rhs(model, &c).view());
    let mut refinements = 0;
    while residual > 0.05 * residual_target && refinements < options.refine_max {
        let r = eom_rhs(model, &c);
        let correction = solve_affine(&spec, &model.sigma, &pattern, factor.as_ref(), &r)?;
        let candidate = linalg::hermitize(&(&c + &correction));
        let candidate_residual = linalg::fro_norm(&eom_rhs(model, &candidate).view());
        if candidate_residual >= residual {
            break;
        }
        c = candidate;
        residual = candidate_residual;
        refinements += 1;
    }
    let refine_s = t_phase.elapsed().as_secs_f64();

    if residual > residual_target {
        return Err(Error::ConsistencyFailure {
            context: "stationarity residual".to_string(),
            defect: residual,
            tolerance: residual_target,
        });
    }

    let correlation = CorrelationMatrix::checked(c, options.eig_tol)?;

    let report = SolveReport {
        strategy: strategy.tag,
        predicted_cost: strategy.predicted_cost,
        n_modes: n,
        n_sigma,
        pattern: pattern.kind,
        delta_rank: spec.gram_rank(),
        condition: spec.condition,
        basis_defect: spec.basis_defect,
        restricted_condition: factor.as_ref().map(|f| f.condition()),
        residual,
        residual_target,
        refinements,
        timings: PhaseTimings {
            decompose: decompose_s,
            formation: formation_s,
            solve: solve_s,
            complete: complete_s,
            refine: refine_s,
            total: t_total.elapsed().as_secs_f64(),
        },
        convention: SIGN_CONVENTION.to_string(),
    };
    let _ = superop;
    Ok(Solution {
        correlation,
        report,
    })
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

    fn max_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
        linalg::max_abs(&(a - b).view())
    }

    #[test]
    fn strategy_selection_and_costs() {
        let s = choose_strategy(100, 0);
        assert_eq!(s.tag, StrategyTag::LyapunovOnly);
        assert_eq!(s.predicted_cost, 1e6);

        // Onsite dephasing on every site of a 100-mode network.
        let s = choose_strategy(100, 100);
        assert_eq!(s.tag, StrategyTag::RestrictedPerElement);
        assert_eq!(s.predicted_cost, 1e8);

        // Dense dephasing on a small network: forming through full maps.
        let s = choose_strategy(10, 100);
        assert_eq!(s.tag, StrategyTag::RestrictedViaFull);
        assert_eq!(s.predicted_cost, 1e6);

        // Cost never decreases when the pattern grows.
        let mut last = 0.0;
        for n_sigma in [0usize, 8, 64, 256, 1024] {
            let s = choose_strategy(32, n_sigma);
            assert!(s.predicted_cost >= last);
            last = s.predicted_cost;
        }
    }

    #[test]
    fn lyapunov_only_matches_oracle() {
        let model = build_long_range_chain(6, 1.0, 1.4, 0.8, 0.5, 0.0).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.strategy, StrategyTag::LyapunovOnly);
        assert_eq!(sol.report.n_sigma, 0);
        let oracle = brute_force_steady_state(&model).unwrap();
        assert!(max_diff(sol.correlation.matrix(), oracle.matrix()) < 1e-12);
        assert!(sol.report.residual <= sol.report.residual_target);
    }

    #[test]
    fn onsite_dephasing_matches_oracle() {
        let model = build_long_range_chain(6, 1.0, 1.3, 1.0, 0.7, 2.5).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.strategy, StrategyTag::RestrictedPerElement);
        assert_eq!(sol.report.pattern, PatternKind::OnsiteAll);
        assert_eq!(sol.report.n_sigma, 6);
        let oracle = brute_force_steady_state(&model).unwrap();
        let diff = max_diff(sol.correlation.matrix(), oracle.matrix());
        assert!(diff < 1e-10, "diff {diff}");
    }

    #[test]
    fn onsite_subset_matches_oracle() {
        let mut model = build_long_range_chain(6, 1.0, 1.5, 0.9, 0.9, 0.0).unwrap();
        model.sigma[(2, 2)] = 3.0;
        model.sigma[(3, 3)] = 0.5;
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.pattern, PatternKind::OnsiteSubset);
        assert_eq!(sol.report.n_sigma, 2);
        let oracle = brute_force_steady_state(&model).unwrap();
        let diff = max_diff(sol.correlation.matrix(), oracle.matrix());
        assert!(diff < 1e-10, "diff {diff}");
    }

    fn dense_sigma_model() -> NetworkModel {
        // sigma = G G^T / 4 is symmetric positive semidefinite with
        // nonzero off-diagonal entries.
        let g = array![
            [1.0, 0.5, 0.0, 0.2],
            [0.5, 1.2, 0.3, 0.0],
            [0.0, 0.3, 0.9, 0.4],
            [0.2, 0.0, 0.4, 1.1]
        ];
        let sigma = g.dot(&g.t()) / 4.0;
        let mut hopping = Array2::<C64>::zeros((4, 4));
        for i in 0..3 {
            hopping[(i, i + 1)] = c(1.0, 0.0);
            hopping[(i + 1, i)] = c(1.0, 0.0);
        }
        let mut gp = Array2::<C64>::zeros((4, 4));
        gp[(0, 0)] = c(1.0, 0.0);
        let mut gm = Array2::<C64>::zeros((4, 4));
        gm[(3, 3)] = c(0.8, 0.0);
        NetworkModel::new(hopping, gp, gm, sigma).unwrap()
    }

    #[test]
    fn general_pattern_matches_oracle_on_both_routes() {
        let model = dense_sigma_model();
        let oracle = brute_force_steady_state(&model).unwrap();

        // Default choice at n = 4, n_sigma = 16 is via_full (16^2 >= 4^3).
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.strategy, StrategyTag::RestrictedViaFull);
        assert_eq!(sol.report.pattern, PatternKind::General);
        assert!(max_diff(sol.correlation.matrix(), oracle.matrix()) < 1e-10);

        let forced = SolveOptions {
            force_strategy: Some(StrategyTag::RestrictedPerElement),
            ..SolveOptions::default()
        };
        let sol2 = solve_steady_state(&model, &forced).unwrap();
        assert_eq!(sol2.report.strategy, StrategyTag::RestrictedPerElement);
        assert!(max_diff(sol2.correlation.matrix(), oracle.matrix()) < 1e-10);

        // The two formation routes agree far below the oracle tolerance.
        let cross = max_diff(sol.correlation.matrix(), sol2.correlation.matrix());
        assert!(cross < 1e-12, "cross {cross}");
    }

    #[test]
    fn forced_via_full_on_diagonal_pattern_agrees() {
        let model = build_long_range_chain(8, 1.0, 1.2, 1.0, 1.0, 5.0).unwrap();
        let default_sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let forced = SolveOptions {
            force_strategy: Some(StrategyTag::RestrictedViaFull),
            ..SolveOptions::default()
        };
        let via_full = solve_steady_state(&model, &forced).unwrap();
        assert_eq!(via_full.report.strategy, StrategyTag::RestrictedViaFull);
        let diff = max_diff(default_sol.correlation.matrix(), via_full.correlation.matrix());
        assert!(diff < 1e-9, "routes disagree by {diff}");
    }

    #[test]
    fn strong_dephasing_stays_accurate() {
        let model = build_long_range_chain(8, 1.0, 1.5, 1.0, 1.0, 1e3).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let oracle = brute_force_steady_state(&model).unwrap();
        let diff = max_diff(sol.correlation.matrix(), oracle.matrix());
        assert!(diff < 1e-9, "diff {diff}");
        // Strong uniform decay compresses the pair kernel.
        assert!(sol.report.delta_rank <= 6, "rank {}", sol.report.delta_rank);
    }

    #[test]
    fn invalid_model_is_rejected_with_violations() {
        let mut hopping = Array2::<C64>::zeros((3, 3));
        hopping[(0, 1)] = c(1.0, 0.0);
        let model = NetworkModel::new_unchecked(
            hopping,
            Array2::zeros((3, 3)),
            Array2::zeros((3, 3)),
            Array2::zeros((3, 3)),
        );
        match solve_steady_state(&model, &SolveOptions::default()) {
            Err(Error::InvalidModel(v)) => assert!(!v.is_empty()),
            other => panic!("expected InvalidModel, got {other:?}"),
        }
    }

    #[test]
    fn force_lyapunov_with_dephasing_is_invalid() {
        let model = build_long_range_chain(4, 1.0, 1.5, 1.0, 1.0, 2.0).unwrap();
        let opts = SolveOptions {
            force_strategy: Some(StrategyTag::LyapunovOnly),
            ..SolveOptions::default()
        };
        assert!(matches!(
            solve_steady_state(&model, &opts),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn memory_budget_is_enforced() {
        let model = build_long_range_chain(32, 1.0, 1.5, 1.0, 1.0, 2.0).unwrap();
        let opts = SolveOptions {
            memory_budget: 100, // far below the 32^2 * 8 bytes needed
            ..SolveOptions::default()
        };
        match solve_steady_state(&model, &opts) {
            Err(Error::MemoryBudgetExceeded { required, budget }) => {
                assert_eq!(budget, 100);
                assert!(required > budget);
            }
            other => panic!("expected MemoryBudgetExceeded, got {other:?}"),
        }
    }

    #[test]
    fn worker_count_does_not_change_bits() {
        let model = build_long_range_chain(24, 1.0, 1.3, 1.0, 0.9, 7.0).unwrap();
        let one = SolveOptions {
            workers: Some(1),
            ..SolveOptions::default()
        };
        let four = SolveOptions {
            workers: Some(4),
            ..SolveOptions::default()
        };
        let a = solve_steady_state(&model, &one).unwrap();
        let b = solve_steady_state(&model, &four).unwrap();
        assert_eq!(a.correlation.matrix(), b.correlation.matrix());
    }

    #[test]
    fn restricted_public_roundtrip() {
        let model = build_long_range_chain(5, 1.0, 1.5, 1.0, 1.0, 2.0).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        let pattern = dephasing_pattern(&model.sigma.view(), 0.0);
        let sup =
            form_restricted_superoperator(&spec, &model.sigma, &pattern, &SolveOptions::default())
                .unwrap();
        assert!(sup.is_diagonal());
        assert_eq!(sup.dim(), 5);
        let c_gamma = lyapunov_steady_state(&spec, &model.gamma_plus).unwrap();
        let rhs = extract_restricted(&pattern, &c_gamma);
        let restricted = solve_restricted(&sup, &rhs).unwrap();
        let full = complete_correlation_matrix(&spec, &model, &pattern, &restricted).unwrap();
        let oracle = brute_force_steady_state(&model).unwrap();
        assert!(max_diff(&full, oracle.matrix()) < 1e-10);
    }

    #[test]
    fn non_hermitian_source_is_rejected() {
        let model = build_long_range_chain(4, 1.0, 1.5, 1.0, 1.0, 0.0).unwrap();
        let spec = decompose(&effective_hamiltonian(&model), None).unwrap();
        let mut source = Array2::<C64>::zeros((4, 4));
        source[(0, 1)] = c(1.0, 0.0); // missing conjugate partner
        assert!(matches!(
            lyapunov_steady_state(&spec, &source),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn checked_correlation_matrix_rejects_unphysical_spectrum() {
        let m = Array2::<C64>::eye(3) * c(1.5, 0.0);
        assert!(matches!(
            CorrelationMatrix::checked(m, 1e-8),
            Err(Error::ConsistencyFailure { .. })
        ));
        let ok = Array2::<C64>::eye(3) * c(0.5, 0.0);
        assert!(CorrelationMatrix::checked(ok, 1e-8).is_ok());
    }

    #[test]
    fn report_carries_convention_and_timings() {
        let model = build_long_range_chain(6, 1.0, 1.5, 1.0, 1.0, 1.0).unwrap();
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        assert_eq!(sol.report.convention, SIGN_CONVENTION);
        assert!(sol.report.timings.total > 0.0);
        assert!(sol.report.restricted_condition.unwrap() >= 1.0);
    }
}
