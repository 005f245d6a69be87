//! Property tests: on randomly generated valid models the fast solver must
//! agree with the dense reference, and derived quantities must respect
//! their structural invariants.

use ndarray_linalg::{Eigh, UPLO};
use proptest::prelude::*;

use ness_core::dynamics::{brute_force_steady_state, eom_rhs};
use ness_core::linalg::{fro_norm, hermiticity_defect, max_abs};
use ness_core::random::{random_model, rng, SigmaKind};
use ness_core::{solve_steady_state, ModelConfig, SolveOptions};

fn sigma_kind(index: u8) -> SigmaKind {
    match index % 4 {
        0 => SigmaKind::Zero,
        1 => SigmaKind::Onsite,
        2 => SigmaKind::OnsiteSubset,
        _ => SigmaKind::Dense,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solver_matches_dense_reference(seed in any::<u64>(), n in 1usize..7, kind in 0u8..4) {
        let model = random_model(n, sigma_kind(kind), &mut rng(seed));
        let fast = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let slow = brute_force_steady_state(&model).unwrap();
        let diff = fast.correlation.matrix() - slow.matrix();
        let scale = max_abs(&slow.matrix().view()).max(1.0);
        prop_assert!(max_abs(&diff.view()) <= 1e-8 * scale,
            "solver deviates from dense reference by {}", max_abs(&diff.view()));
    }

    #[test]
    fn steady_state_is_physical_and_stationary(seed in any::<u64>(), n in 1usize..7, kind in 0u8..4) {
        let model = random_model(n, sigma_kind(kind), &mut rng(seed));
        let sol = solve_steady_state(&model, &SolveOptions::default()).unwrap();
        let c = sol.correlation.matrix();

        prop_assert!(hermiticity_defect(&c.view()) <= 1e-12 * max_abs(&c.view()).max(1.0));
        let (eigs, _) = c.eigh(UPLO::Lower).unwrap();
        for &e in eigs.iter() {
            prop_assert!(e >= -1e-8 && e <= 1.0 + 1e-8, "eigenvalue {e} outside [0, 1]");
        }

        let residual = eom_rhs(&model, c);
        let target = 1e-10 * fro_norm(&model.gamma_plus.view()).max(f64::MIN_POSITIVE);
        prop_assert!(fro_norm(&residual.view()) <= target,
            "residual {} above target {}", fro_norm(&residual.view()), target);
    }

    #[test]
    fn config_round_trip_is_lossless(seed in any::<u64>(), n in 1usize..7, kind in 0u8..4) {
        let model = random_model(n, sigma_kind(kind), &mut rng(seed));
        let json = serde_json::to_string(&ModelConfig::from_model(&model)).unwrap();
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        let rebuilt = back.to_model().unwrap();
        prop_assert_eq!(rebuilt.hopping, model.hopping.clone());
        prop_assert_eq!(rebuilt.gamma_plus, model.gamma_plus.clone());
        prop_assert_eq!(rebuilt.gamma_minus, model.gamma_minus.clone());
        prop_assert_eq!(rebuilt.sigma, model.sigma.clone());
    }
}
