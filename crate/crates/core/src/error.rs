//! Error type shared by every stage of the pipeline.
//!
//! Validation problems are collected into [`Error::InvalidModel`] so a caller
//! sees every defect at once instead of fixing them one by one. Numerical
//! failures carry the measured defect together with the tolerance that was
//! violated, which makes the diagnostics reproducible.

use crate::model::Violation;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of model construction, solving, and fitting.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// The model violates a structural requirement (shape, Hermiticity,
    /// positivity, finiteness). Contains one entry per violated property.
    #[error("invalid model:\n{}", format_violations(.0))]
    InvalidModel(Vec<Violation>),

    /// A scalar argument or configuration field is out of range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The eigenbasis of the evolution generator could not be inverted to
    /// working precision, so spectral formulas would silently lose accuracy.
    #[error("eigenbasis not usable: biorthogonality defect {defect:.3e} exceeds {tolerance:.3e}")]
    NonDiagonalizable { defect: f64, tolerance: f64 },

    /// A pair of eigenvalues has (numerically) no combined decay, so the
    /// steady-state formula would divide by zero.
    #[error("mode pair ({p}, {q}) has no net dissipation: |lambda_p + conj(lambda_q)| = {magnitude:.3e} <= {tolerance:.3e}")]
    NonDissipativePair {
        p: usize,
        q: usize,
        magnitude: f64,
        tolerance: f64,
    },

    /// The restricted linear system is singular or too ill-conditioned to
    /// trust; reported with the estimated condition number.
    #[error("restricted dephasing system is numerically singular (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    /// An internal cross-check failed after a solve; the solution is not
    /// returned because it does not satisfy the equations it came from.
    #[error("self-consistency check failed ({context}): defect {defect:.3e} > {tolerance:.3e}")]
    ConsistencyFailure {
        context: String,
        defect: f64,
        tolerance: f64,
    },

    /// Building the requested dense operator would exceed the memory budget.
    #[error("operation needs {required} bytes but the budget is {budget} bytes")]
    MemoryBudgetExceeded { required: u64, budget: u64 },

    /// Time integration produced an occupation spectrum outside [0, 1],
    /// which signals a step size too large for the stiffest decay mode.
    #[error("integration unstable at t = {time:.6}: occupation eigenvalue {eigenvalue:.6} outside [0, 1]")]
    StepTooLarge { time: f64, eigenvalue: f64 },

    /// The vectorized generator is singular: the steady state is not unique.
    #[error("vectorized generator is singular; the steady state is not unique")]
    SingularLindbladian,

    /// Terminal currents are only defined when injection and extraction act
    /// on disjoint sets of modes.
    #[error("injection and extraction supports overlap; terminal currents are not defined")]
    NotBoundaryDriven,

    /// The steady current is indistinguishable from zero, so a resistance
    /// cannot be formed.
    #[error("steady current {current:.3e} is below the zero threshold; resistance undefined")]
    ZeroCurrent { current: f64 },

    /// A fit was requested with fewer points than free parameters allow.
    #[error("fit needs at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    /// Power-law fits work on logarithms, so every resistance must be
    /// positive and finite.
    #[error("resistance {value:.6e} at point {index} is not positive and finite; cannot fit logs")]
    NonpositiveResistance { index: usize, value: f64 },

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed JSON configuration or report.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed CSV table.
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code for command line front ends: validation problems
    /// map to 2, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidModel(_) | Error::InvalidInput(_) => 2,
            _ => 1,
        }
    }

    /// Short machine-readable tag naming the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidModel(_) => "invalid_model",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonDiagonalizable { .. } => "non_diagonalizable",
            Error::NonDissipativePair { .. } => "non_dissipative_pair",
            Error::SingularSystem { .. } => "singular_system",
            Error::ConsistencyFailure { .. } => "consistency_failure",
            Error::MemoryBudgetExceeded { .. } => "memory_budget_exceeded",
            Error::StepTooLarge { .. } => "step_too_large",
            Error::SingularLindbladian => "singular_lindbladian",
            Error::NotBoundaryDriven => "not_boundary_driven",
            Error::ZeroCurrent { .. } => "zero_current",
            Error::InsufficientPoints { .. } => "insufficient_points",
            Error::NonpositiveResistance { .. } => "nonpositive_resistance",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("  - {v}"))
        .collect::<Vec<_>>()
        .join("\n")
}
