mod common;

use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_is_idempotent(v in proptest::collection::vec(-10.0f64..10.0, 1..8)) {
        projection_idempotent(&v)?;
    }

    #[test]
    fn projection_beats_lattice(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
        projection_matches_grid(&[a, b, c], &simplex_grid(200))?;
    }

    #[test]
    fn qp_beats_lattice(a in proptest::collection::vec(-3.0f64..3.0, 12), b in proptest::collection::vec(-3.0f64..3.0, 4)) {
        qp_matches_grid(&a, &b, &simplex_grid(100))?;
    }

    #[test]
    fn moment_residual_is_affine(
        (panel, w1, w2) in panel_strategy().prop_flat_map(|p| {
            let j = p.n_controls();
            (Just(p), simplex_point(j), simplex_point(j))
        }),
        alpha in 0.0f64..=1.0,
    ) {
        moments_linear(&panel, &w1, &w2, alpha)?;
    }

    #[test]
    fn moments_scale_with_outcomes(panel in panel_strategy(), c in 0.1f64..10.0) {
        moments_scale_equivariant(&panel, c)?;
    }

    #[test]
    fn demeaned_first_row_is_zero(panel in panel_strategy()) {
        demeaned_first_moment_vanishes(&panel)?;
    }

    #[test]
    fn att_plus_counterfactual_is_outcome(panel in panel_strategy()) {
        att_identity(&panel)?;
    }

    #[test]
    fn d2mscm_absorbs_level_shifts(panel in panel_strategy(), c in -50.0f64..50.0) {
        d2mscm_shift_equivariant(&panel, c)?;
    }

    #[test]
    fn d2mscm_shift_on_identified_panels(panel in panels_with_controls(1..=2), c in -50.0f64..50.0) {
        d2mscm_shift_equivariant(&panel, c)?;
    }

    #[test]
    fn d2mscm_ignores_untreated_level_shifts(
        panel in panels_with_controls(1..=2),
        unit in 0usize..2,
        c in -50.0f64..50.0,
    ) {
        d2mscm_untreated_shift_equivariant(&panel, unit, c)?;
    }

    #[test]
    fn everything_is_seed_deterministic(seed in any::<u64>()) {
        seed_determinism(seed)?;
    }
}
