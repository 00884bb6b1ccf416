//! Property tests for the structural invariants.

use ewel_core::coefficients::{weierstrass, CoefficientField, Manifold};
use ewel_core::euler::{refine_common_noise, simulate_batch, GridSchedule};
use ewel_core::math;
use ewel_core::weak_error::fit_rate;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn weierstrass_even_and_geometric_at_zero(
        gamma in 0.1f64..0.95,
        base in 2u32..5,
        n_terms in 1u32..14,
        x in -8.0f64..8.0,
    ) {
        prop_assert_eq!(
            weierstrass(x, gamma, base, n_terms),
            weierstrass(-x, gamma, base, n_terms)
        );
        let a = math::powf(base as f64, -gamma);
        let want = (1.0 - math::powf(a, n_terms as f64)) / (1.0 - a);
        prop_assert!((weierstrass(0.0, gamma, base, n_terms) - want).abs() < 1e-10);
    }

    #[test]
    fn cos_pi_tracks_std_cos(x in -1e4f64..1e4) {
        let want = (core::f64::consts::PI * x).cos();
        prop_assert!((math::cos_pi(x) - want).abs() < 1e-9);
    }

    #[test]
    fn projection_distance_identity(
        cx in -2.0f64..2.0,
        cy in -2.0f64..2.0,
        r in 0.2f64..3.0,
        px in -5.0f64..5.0,
        py in -5.0f64..5.0,
    ) {
        let m = Manifold::sphere(vec![cx, cy], r).unwrap();
        let x = [px, py];
        let mut proj = [0.0; 2];
        m.project(&x, &mut proj);
        let dist = ((x[0]-proj[0]).powi(2) + (x[1]-proj[1]).powi(2)).sqrt();
        prop_assert!((dist - m.signed_distance(&x).abs()).abs() < 1e-10);
    }

    #[test]
    fn refinement_preserves_coarse_sums(
        seed in 0u64..1000,
        factor in 2usize..9,
        n in 1usize..9,
    ) {
        let f = CoefficientField::constant(1, vec![0.1], vec![1.0]).unwrap();
        let grid = GridSchedule::new(1.0, n).unwrap();
        let batch = simulate_batch(&f, &[0.0], grid, 4, seed).unwrap();
        let fine = refine_common_noise(&batch, factor).unwrap();
        for p in 0..4 {
            for i in 0..n {
                let sum: f64 = (0..factor)
                    .map(|s| fine.increments[p * n * factor + i * factor + s])
                    .sum();
                prop_assert!((sum - batch.increment(p, i)[0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn fit_rate_scale_equivariance(
        lambda in 0.001f64..1000.0,
        slope in -1.0f64..2.0,
    ) {
        let pts: Vec<(f64, f64, f64)> = (1..=6)
            .map(|k| {
                let h = 2f64.powi(-k);
                (h, 3.0 * h.powf(slope.abs() + 0.05) * (1.0 + 0.02 * (k as f64).sin()), 0.01)
            })
            .collect();
        let f1 = fit_rate(&pts).unwrap();
        let scaled: Vec<(f64, f64, f64)> = pts.iter().map(|&(h, e, se)| (h, lambda * e, se)).collect();
        let f2 = fit_rate(&scaled).unwrap();
        prop_assert!((f1.slope - f2.slope).abs() < 1e-12);
        prop_assert!((f2.intercept - f1.intercept - lambda.ln()).abs() < 1e-9);
    }
}
