//! Shared setup for the criterion benches.

use ness_core::{build_long_range_chain, NetworkModel};

/// Boundary-driven chain with onsite dephasing, the workload the solver
/// is tuned for.
pub fn chain(n: usize, alpha: f64, sigma: f64) -> NetworkModel {
    build_long_range_chain(n, 1.0, alpha, 1.0, 1.0, sigma).expect("valid chain")
}
