//! Reference dynamics: right-hand side evaluation, explicit time
//! integration, and a brute-force steady state via full vectorization.
//!
//! This module is deliberately independent of the spectral solver. It builds
//! every operator directly from the model, so it can serve as an oracle for
//! cross-checking the fast path. The brute-force route scales as `O(n^6)`
//! and is capped at small sizes; the integrator scales as `O(n^3)` per step.

use ndarray::Array2;
use ndarray_linalg::{Eigh, FactorizeInto, Solve, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{validate_model, NetworkModel};
use crate::steady_state::CorrelationMatrix;

/// Size cap for the brute-force solver; above this the dense vectorized
/// generator (`n^2 x n^2`) stops being a reasonable object.
pub const BRUTE_FORCE_MAX_MODES: usize = 64;

/// Loose eigenvalue tolerance for trajectory snapshots: occupations may
/// leave [0, 1] by integration error, but not by more than this.
pub const SNAPSHOT_EIG_TOL: f64 = 1e-3;

/// Step-size and snapshot policy for [`integrate`].
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    /// Step = `safety / rate_scale`; 0.1 keeps RK4 well inside its
    /// stability region for the stiffest mode.
    pub safety: f64,
    /// Optional hard cap on the step size.
    pub max_step: Option<f64>,
    /// Number of recorded states, evenly spaced in time including both ends.
    pub n_snapshots: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            safety: 0.1,
            max_step: None,
            n_snapshots: 33,
        }
    }
}

/// Time series of correlation matrices with per-snapshot residual norms.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CorrelationMatrix>,
    /// Frobenius norm of the equation-of-motion right-hand side at each
    /// snapshot; decays to the solver floor as the state becomes stationary.
    pub residual_norms: Vec<f64>,
}

/// Coefficient matrices reused across right-hand side evaluations.
struct RhsOperators {
    /// `B = -i H - (Gp + Gm) / 2`; the full drift is `B C + C B^dagger`
    /// plus the dephasing and source terms.
    b: Array2<C64>,
    /// Fused dephasing coefficient `K[i,j] = sigma[i,j] - (sigma[i,i] +
    /// sigma[j,j]) / 2`. Its diagonal vanishes identically, which keeps the
    /// residual floor at the size of the off-diagonal entries instead of
    /// the (possibly huge) dephasing rate.
    k: Array2<f64>,
    gamma_plus: Array2<C64>,
}

impl RhsOperators {
    fn new(model: &NetworkModel) -> Self {
        let n = model.n_modes();
        let gamma = model.gamma_total();
        let mut b = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = -C64::i() * model.hopping[(i, j)] - 0.5 * gamma[(i, j)];
            }
        }
        let mut k = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    k[(i, j)] = model.sigma[(i, j)]
                        - 0.5 * (model.sigma[(i, i)] + model.sigma[(j, j)]);
                }
            }
        }
        Self {
            b,
            k,
            gamma_plus: model.gamma_plus.clone(),
        }
    }

    /// Evaluate the right-hand side. The drift is assembled as
    /// `M + M^dagger` with `M = B C`, which is exactly Hermitian for
    /// Hermitian input, so trajectories never drift off the Hermitian
    /// manifold.
    fn apply(&self, c: &Array2<C64>) -> Array2<C64> {
        let n = c.nrows();
        let m = self.b.dot(c);
        let mut out = Array2::<C64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = m[(i, j)]
                    + m[(j, i)].conj()
                    + self.k[(i, j)] * c[(i, j)]
                    + self.gamma_plus[(i, j)];
            }
        }
        out
    }
}

/// Uncorrelated initial state with the same occupation on every mode.
pub fn uniform_initial_state(n: usize, occupation: f64) -> Array2<C64> {
    Array2::from_diag_elem(n, C64::new(occupation, 0.0))
}

/// Right-hand side of the correlation-matrix equation of motion.
pub fn eom_rhs(model: &NetworkModel, c: &Array2<C64>) -> Array2<C64> {
    RhsOperators::new(model).apply(c)
}

/// Scale of the fastest rate in the generator, used to pick the step size.
fn rate_scale(model: &NetworkModel, ops: &RhsOperators) -> f64 {
    let n = model.n_modes();
    let mut col_sum_max = 0.0f64;
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            s += ops.b[(i, j)].norm();
        }
        col_sum_max = col_sum_max.max(s);
    }
    let k_max = ops.k.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    col_sum_max + k_max
}

/// Integrate the equation of motion with fixed-step RK4 from `c0` to
/// `t_final`, recording evenly spaced snapshots.
///
/// Each snapshot is spectrally checked: if any occupation eigenvalue exits
/// `[-SNAPSHOT_EIG_TOL, 1 + SNAPSHOT_EIG_TOL]` the step size was too large
/// for the stiffest mode and the run aborts with [`Error::StepTooLarge`].
pub fn integrate(
    model: &NetworkModel,
    c0: &Array2<C64>,
    t_final: f64,
    control: &StepControl,
) -> Result<Trajectory> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let n = model.n_modes();
    if c0.nrows() != n || c0.ncols() != n {
        return Err(Error::InvalidInput(format!(
            "initial state is {}x{}, model has {} modes",
            c0.nrows(),
            c0.ncols(),
            n
        )));
    }
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(Error::InvalidInput(format!(
            "final time must be positive and finite, got {t_final}"
        )));
    }
    if linalg::hermiticity_defect(&c0.view()) > 1e-10 * linalg::max_abs(&c0.view()).max(1.0) {
        return Err(Error::InvalidInput(
            "initial correlation matrix is not Hermitian".to_string(),
        ));
    }
    let (min0, max0) = eig_bounds(c0)?;
    if min0 < -1e-9 || max0 > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(format!(
            "initial occupation spectrum [{min0:.3e}, {max0:.3e}] is outside [0, 1]"
        )));
    }

    let ops = RhsOperators::new(model);
    let scale = rate_scale(model, &ops);
    let mut h = if scale > 0.0 {
        control.safety / scale
    } else {
        t_final
    };
    if let Some(cap) = control.max_step {
        if !(cap.is_finite() && cap > 0.0) {
            return Err(Error::InvalidInput(format!(
                "max_step must be positive, got {cap}"
            )));
        }
        h = h.min(cap);
    }
    let n_snap = control.n_snapshots.max(2);
    let seg_t = t_final / (n_snap - 1) as f64;

    let mut c = linalg::hermitize(c0);
    let mut traj = Trajectory {
        times: Vec::with_capacity(n_snap),
        states: Vec::with_capacity(n_snap),
        residual_norms: Vec::with_capacity(n_snap),
    };
    record_snapshot(&mut traj, &ops, 0.0, &c)?;

    for seg in 1..n_snap {
        let steps = (seg_t / h).ceil().max(1.0) as usize;
        let dt = seg_t / steps as f64;
        for _ in 0..steps {
            c = rk4_step(&ops, &c, dt);
        }
        let t = seg as f64 * seg_t;
        record_snapshot(&mut traj, &ops, t, &c)?;
    }
    Ok(traj)
}

fn rk4_step(ops: &RhsOperators, c: &Array2<C64>, h: f64) -> Array2<C64> {
    let k1 = ops.apply(c);
    let k2 = ops.apply(&(c + &(&k1 * C64::new(0.5 * h, 0.0))));
    let k3 = ops.apply(&(c + &(&k2 * C64::new(0.5 * h, 0.0))));
    let k4 = ops.apply(&(c + &(&k3 * C64::new(h, 0.0))));
    let incr = (&k1 + &(&k2 * C64::new(2.0, 0.0)) + &(&k3 * C64::new(2.0, 0.0)) + &k4)
        * C64::new(h / 6.0, 0.0);
    c + &incr
}

fn eig_bounds(c: &Array2<C64>) -> Result<(f64, f64)> {
    let (vals, _) = c
        .to_owned()
        .eigh(UPLO::Lower)
        .map_err(|e| Error::InvalidInput(format!("eigensolve failed on snapshot: {e}")))?;
    let min = vals.iter().fold(f64::INFINITY, |m, &x| m.min(x));
    let max = vals.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    Ok((min, max))
}

fn record_snapshot(
    traj: &mut Trajectory,
    ops: &RhsOperators,
    t: f64,
    c: &Array2<C64>,
) -> Result<()> {
    let (min, max) = eig_bounds(c)?;
    if t > 0.0 && (min < -SNAPSHOT_EIG_TOL || max > 1.0 + SNAPSHOT_EIG_TOL) {
        let eigenvalue = if min < -SNAPSHOT_EIG_TOL { min } else { max };
        return Err(Error::StepTooLarge { time: t, eigenvalue });
    }
    let residual = linalg::fro_norm(&ops.apply(c).view());
    traj.times.push(t);
    traj.states.push(CorrelationMatrix::new_unchecked(c.clone()));
    traj.residual_norms.push(residual);
    Ok(())
}

/// Dense `n^2 x n^2` generator of the vectorized equation of motion:
/// `L = I kron A + conj(A) kron I + diag(vec sigma)` with `A = -i H -
/// (Gp + Gm) / 2 - diag(sigma) / 2`, acting on column-major `vec(C)`.
///
/// Its spectrum gives the exact relaxation rates including dephasing
/// feedback. Refuses to run above [`BRUTE_FORCE_MAX_MODES`].
pub fn superoperator_matrix(model: &NetworkModel) -> Result<Array2<C64>> {
    let violations = validate_model(model);
    if !violations.is_empty() {
        return Err(Error::InvalidModel(violations));
    }
    let n = model.n_modes();
    if n > BRUTE_FORCE_MAX_MODES {
        return Err(Error::InvalidInput(format!(
            "brute force is capped at {BRUTE_FORCE_MAX_MODES} modes, got {n}"
        )));
    }

    let gamma = model.gamma_total();
    let mut a = Array2::<C64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = -C64::i() * model.hopping[(i, j)] - 0.5 * gamma[(i, j)];
        }
        a[(i, i)] -= C64::new(0.5 * model.sigma[(i, i)], 0.0);
    }

    let eye = Array2::<C64>::eye(n);
    let a_conj = a.mapv(|z| z.conj());
    let mut l = linalg::kron(&eye.view(), &a.view()) + linalg::kron(&a_conj.view(), &eye.view());
    for j in 0..n {
        for i in 0..n {
            l[(i + j * n, i + j * n)] += C64::new(model.sigma[(i, j)], 0.0);
        }
    }
    Ok(l)
}

/// Steady state by direct solution of the fully vectorized equation
/// `L vec(C) = -vec(Gp)`. Intended as a cross-check for small systems.
pub fn brute_force_steady_state(model: &NetworkModel) -> Result<CorrelationMatrix> {
    let n = model.n_modes();
    let l = superoperator_matrix(model)?;
    let rhs = linalg::vectorize(&model.gamma_plus.view()).mapv(|z| -z);
    let factored = l
        .factorize_into()
        .map_err(|_| Error::SingularLindbladian)?;
    let rcond = ndarray_linalg::ReciprocalConditionNum::rcond(&factored)
        .map_err(|_| Error::SingularLindbladian)?;
    if rcond < 1e-14 {
        return Err(Error::SingularLindbladian);
    }
    let sol = factored.solve(&rhs).map_err(|_| Error::SingularLindbladian)?;
    let c = linalg::hermitize(&linalg::unvectorize(n, &sol));
    CorrelationMatrix::checked(c, 1e-8)
}

/// Write a trajectory as CSV: `t, n_1, ..., n_N, residual` with full
/// precision so round-trips are lossless.
pub fn trajectory_to_csv<W: std::io::Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = traj
        .states
        .first()
        .map(|s| s.matrix().nrows())
        .unwrap_or(0);
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        header.push(format!("n_{i}"));
    }
    header.push("residual".to_string());
    w.write_record(&header)?;
    for (k, t) in traj.times.iter().enumerate() {
        let mut row = vec![format!("{t:.17e}")];
        let m = traj.states[k].matrix();
        for i in 0..n {
            row.push(format!("{:.17e}", m[(i, i)].re));
        }
        row.push(format!("{:.17e}", traj.residual_norms[k]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
