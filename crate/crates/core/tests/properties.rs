//! Cross-module properties on randomly drawn geometric ensembles.

use ensemble_place::ensemble::{
    norm, DecayFamily, EnsembleSpec, InputFamily, MaterializedEnsemble, SpaceTag, TargetSpectrum,
};
use ensemble_place::feasibility::{phi_decay_certificate, ratio_test};
use ensemble_place::gain::{
    ackermann_finite, convergence_diagnostic, gain_infinite, gain_mirror_from_pi, phi_matrix,
    pi_sequence,
};
use ensemble_place::simulation::{integrate_rk4, step_limit, InitialCondition, TrajectoryConfig};
use ensemble_place::spectral::{build_cauchy, ClosedLoopOperator, TransformedGenerator};
use ensemble_place::special::{xi_with_terms, zeta_with_terms};
use ensemble_place::Complex64;
use proptest::prelude::*;

fn geo(ratio: f64, beta: f64, n: usize, space: SpaceTag) -> MaterializedEnsemble {
    EnsembleSpec::new(
        DecayFamily::Geometric { ratio, scale: 1.0 },
        InputFamily::Geometric { ratio: beta, scale: 1.0 },
        n,
        space,
    )
    .materialize()
    .unwrap()
}

fn lambda_from(ens: &MaterializedEnsemble, shifts: &[(f64, f64)]) -> Vec<Complex64> {
    // Left half-plane targets away from the poles.
    ens.a
        .iter()
        .zip(shifts)
        .map(|(&a, &(re, im))| Complex64::new(-a * re, a * im))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn closed_loop_is_rank_one_update_and_b_similar(
        ratio in 0.2f64..0.7, beta in 0.5f64..1.2, n in 1usize..10,
        shifts in prop::collection::vec((0.5f64..3.0, -1.0f64..1.0), 10),
    ) {
        let e = geo(ratio, beta, n, SpaceTag::L2);
        let lambda = lambda_from(&e, &shifts);
        let g = ackermann_finite(&e.a, &e.b, &lambda).unwrap();
        let op = ClosedLoopOperator::new(&e.a, &e.b, &g.entries).unwrap();
        prop_assert!(op.rank_one_defect() <= 1e-12);
        let t = TransformedGenerator::new(&e, &g).unwrap();
        prop_assert!(t.similarity_defect(&op) <= 1e-10);
    }

    #[test]
    fn weighted_cauchy_norm_within_certificate(ratio in 0.2f64..0.6, slack in 0.05f64..0.4, n in 2usize..14) {
        let beta = (ratio + slack).min(0.95);
        let e = geo(ratio, beta, n, SpaceTag::L2);
        let cert = ratio_test(&e);
        prop_assume!(cert.pass);
        let dc = phi_decay_certificate(&phi_matrix(&e), None, Some(&cert)).unwrap();
        let pi = pi_sequence(&e, n).unwrap();
        let p = build_cauchy(&e, &pi).unwrap();
        prop_assert!(p.weighted_row_norm(&e.b) <= dc.kappa * pi.sup_norm() * (1.0 + 1e-12));
    }

    #[test]
    fn truncated_gain_ratios_below_one(ratio in 0.2f64..0.6, beta in 0.5f64..1.2, n in 1usize..12) {
        let e = geo(ratio, beta, 4 * n, SpaceTag::L2);
        let pts = convergence_diagnostic(&e, &TargetSpectrum::Mirror, &[n], 4 * n).unwrap();
        prop_assert!(pts[0].ratio_moduli.iter().all(|&r| r < 1.0));
    }

    #[test]
    fn finite_gain_equals_product_gain_at_m_equals_n(
        ratio in 0.2f64..0.7, beta in 0.5f64..1.2, n in 1usize..12,
        shifts in prop::collection::vec((0.5f64..3.0, -1.0f64..1.0), 12),
    ) {
        let e = geo(ratio, beta, n, SpaceTag::L2);
        let lambda = lambda_from(&e, &shifts);
        let values = lambda.iter().map(|&z| z.into()).collect();
        let targets = TargetSpectrum::Explicit { values };
        let finite = ackermann_finite(&e.a, &e.b, &lambda).unwrap();
        let product = gain_infinite(&e, &targets, n).unwrap();
        for (x, y) in finite.entries.iter().zip(&product.entries) {
            prop_assert!((x - y).norm() <= 1e-12 * x.norm().max(1e-300));
        }
    }

    #[test]
    fn trajectory_bookkeeping(n in 1usize..8, seed in 0u64..500, p in 1.0f64..4.0) {
        let space = SpaceTag::Lp { p };
        let e = geo(0.5, 0.8, n, space);
        let pi = pi_sequence(&e, n).unwrap();
        let k = gain_mirror_from_pi(&e, &pi).entries;
        let x0 = InitialCondition::Random { seed }.materialize(&e, None).unwrap();
        let cfg = TrajectoryConfig { t_end: 3.0, dt: step_limit(&e, &k), record_every: 7, space, epsilon: 0.1 };
        let traj = integrate_rk4(&e, &k, &x0, &cfg).unwrap();
        prop_assert_eq!(&traj.states[0], &x0);
        prop_assert_eq!(*traj.times.last().unwrap(), 3.0);
        for (x, &nx) in traj.states.iter().zip(&traj.norms) {
            prop_assert!((norm(x, space) - nx).abs() <= 1e-12 * nx.max(1e-300));
        }
    }

    #[test]
    fn series_tail_bounds_are_honest(d in 1.1f64..8.0, terms in 16usize..4096) {
        let coarse = zeta_with_terms(d, terms).unwrap();
        let fine = zeta_with_terms(d, 2 * terms).unwrap();
        prop_assert!((coarse.value - fine.value).abs() < coarse.tail_bound);
        let coarse = xi_with_terms(d, terms).unwrap();
        let fine = xi_with_terms(d, 2 * terms).unwrap();
        prop_assert!((coarse.value - fine.value).abs() < coarse.tail_bound);
    }
}

#[test]
fn two_mode_pipeline_by_hand() {
    let e = MaterializedEnsemble::from_real(&[0.5, 0.25], &[1.0, 1.0], SpaceTag::LInfinity).unwrap();
    let pi = pi_sequence(&e, 2).unwrap();
    assert_eq!(pi.values, vec![6.0, -6.0]);
    let k = gain_mirror_from_pi(&e, &pi).entries;
    // k_n = -a_n pi_n / b_n
    assert!((k[0] - Complex64::new(-3.0, 0.0)).norm() < 1e-15);
    assert!((k[1] - Complex64::new(1.5, 0.0)).norm() < 1e-15);
    let p = build_cauchy(&e, &pi).unwrap();
    assert_eq!(p.involution_residual, 0.0);
    let cfg = TrajectoryConfig {
        t_end: 4.0 * std::f64::consts::LN_2,
        dt: 1e-3,
        record_every: 100,
        space: SpaceTag::LInfinity,
        epsilon: 0.5,
    };
    let one = Complex64::new(1.0, 0.0);
    let traj = integrate_rk4(&e, &k, &[one, one], &cfg).unwrap();
    let last = traj.states.last().unwrap();
    assert!((last[0].re + 0.25).abs() < 1e-9);
    assert!((last[1].re + 0.5).abs() < 1e-9);
}
