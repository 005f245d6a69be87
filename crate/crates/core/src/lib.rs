//! Steady-state transport in open quadratic fermionic networks.
//!
//! A network of `N` fermionic modes evolves under Hermitian hopping,
//! local gain and loss, and dephasing. Because the generator is quadratic,
//! the two-point correlation matrix `C[m, m'] = <c^dag_{m'} c_m>` closes on
//! itself and the unique steady state can be found without touching the
//! exponentially large many-body space.
//!
//! The solver diagonalizes the effective (non-Hermitian) single-particle
//! generator once, exploits the low numerical rank of the resulting
//! frequency-difference kernel, and restricts the dephasing coupling to the
//! entries where rates actually live. Cost collapses from the dense
//! `O(N^6)` superoperator solve to roughly `O(N^3)` for chains with onsite
//! dephasing, which is what makes thousand-site transport sweeps routine.
//!
//! Module map:
//!
//! * [`model`]: network definition and validation, chain builders,
//!   dephasing pattern classification.
//! * [`spectral`]: one-sided diagonalization of the generator, stability
//!   checks, and the low-rank kernel factorization.
//! * [`steady_state`]: strategy dispatch, restricted solve, completion,
//!   and iterative refinement; the main entry is [`solve_steady_state`].
//! * [`dynamics`]: reference equation-of-motion integrator and a dense
//!   brute-force steady state, both used as ground truth in tests.
//! * [`observables`]: occupations, terminal and cut currents, resistance.
//! * [`scaling`]: resistance-versus-size sweeps and the fits that locate
//!   the transport transition.
//! * [`config`]: JSON model descriptions.
//! * [`random`]: seeded generators for tests and benchmarks.

// Pull in the BLAS/LAPACK backend so every downstream target links it.
use blas_src as _;
use openblas_src as _;

pub mod config;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod model;
pub mod observables;
pub mod random;
pub mod scaling;
pub mod spectral;
pub mod steady_state;

pub use config::{load_model, parse_model, save_model, ModelConfig};
pub use dynamics::{
    brute_force_steady_state, eom_rhs, integrate, superoperator_matrix, trajectory_to_csv,
    uniform_initial_state, StepControl, Trajectory,
};
pub use error::{Error, Result};
pub use model::{
    build_long_range_chain, dephasing_pattern, DephasingPattern, NetworkModel, PatternKind,
    Violation,
};
pub use observables::{
    bulk_linear_fit, cut_currents, occupations, resistance, terminal_currents, transport_report,
    LinearProfileFit, TransportReport,
};
pub use scaling::{
    fit_nu_of_alpha, fit_power_law, fit_sweep_table, large_system_preset, read_sweep_table,
    run_sweep, small_system_preset, AlphaFit, ChainParams, CriticalPointEstimate,
    CriticalPointFit, ScalingFit, SweepAnalysis, SweepPlan, SweepRow, DEFAULT_ALPHA_MAX_FIT,
};
pub use spectral::{decompose, effective_hamiltonian, EffectiveHamiltonian, SpectralData};
pub use steady_state::{
    choose_strategy, solve_steady_state, CorrelationMatrix, PhaseTimings, Solution, SolveOptions,
    SolveReport, SolveStrategy, StrategyTag,
};
