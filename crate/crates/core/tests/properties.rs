use proptest::prelude::*;

use umelab::brownian::brownian_step;
use umelab::ensemble::{build_ume, scale_matrix, wrap_phase, PhaseConfiguration, SeedSpec};
use umelab::mcharness::Accumulator;
use umelab::nbwalks::{bass_residual, hashimoto, y_from_operator, DirectedEdgeSpace};
use umelab::spectral::{chebyshev_eval, chebyshev_power_table, eigenvalues, y_n};
use umelab::C64;

fn phases(max_n: usize) -> impl Strategy<Value = PhaseConfiguration> {
    (3..=max_n).prop_flat_map(|n| {
        prop::collection::vec(0.0..std::f64::consts::TAU, n * (n - 1) / 2).prop_map(move |p| PhaseConfiguration::new(n, p).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn wrapped_phases_stay_in_range(x in -1e6f64..1e6) {
        let w = wrap_phase(x);
        prop_assert!((0.0..std::f64::consts::TAU).contains(&w));
        let k = ((x - w) / std::f64::consts::TAU).round();
        prop_assert!((x - w - k * std::f64::consts::TAU).abs() < 1e-6);
    }

    #[test]
    fn ume_is_hermitian_traceless_with_fixed_frobenius(phi in phases(12)) {
        let m = build_ume(&phi);
        let n = phi.size() as f64;
        prop_assert!(m.hermiticity_residual() < 1e-14);
        prop_assert!(m.trace().norm() < 1e-12);
        prop_assert!((m.trace_of_square() - n * (n - 1.0)).abs() < 1e-10 * n * n);
        let spec = eigenvalues(&m).unwrap();
        prop_assert!(spec.eigenvalues.iter().sum::<f64>().abs() < 1e-9 * n);
    }

    #[test]
    fn scaling_divides_by_the_fixed_constant(phi in phases(10)) {
        let m = build_ume(&phi);
        let w = scale_matrix(&m).unwrap();
        let d = 2.0 * ((phi.size() - 2) as f64).sqrt();
        for (a, b) in m.entries().iter().zip(w.entries()) {
            prop_assert!((a / d - b).norm() < 1e-15);
        }
    }

    #[test]
    fn pre_trace_identity_holds(phi in phases(8), n in 1usize..=10) {
        let spec = eigenvalues(&build_ume(&phi)).unwrap();
        let walk = y_from_operator(&hashimoto(&phi).unwrap(), n)[n];
        let spectral = y_n(&spec, n).unwrap();
        prop_assert!((walk - spectral).abs() < 1e-9 * (1.0 + walk.abs()));
    }

    #[test]
    fn bass_identity_holds(phi in phases(7), re in -2.0f64..2.0, im in 0.05f64..2.0) {
        prop_assert!(bass_residual(&phi, C64::new(re, im)).unwrap() < 1e-8);
    }

    #[test]
    fn power_table_reproduces_chebyshev(n in 0usize..=20, x in -1.0f64..1.0) {
        let by_table: f64 = chebyshev_power_table(n).iter().map(|&(p, d)| d * x.powi(p as i32)).sum();
        prop_assert!((by_table - chebyshev_eval(n, x)).abs() < 1e-9);
    }

    #[test]
    fn reversal_is_a_fixed_point_free_involution(n in 3usize..=9) {
        let s = DirectedEdgeSpace::new(n).unwrap();
        for e in 0..s.len() {
            let r = s.reversal(e);
            prop_assert_ne!(r, e);
            prop_assert_eq!(s.reversal(r), e);
            prop_assert_eq!(s.origin(r), s.terminus(e));
            prop_assert!(s.successors(e).all(|f| f != r && s.origin(f) == s.terminus(e)));
        }
    }

    #[test]
    fn brownian_step_keeps_invariants(phi in phases(8), ds in 1e-6f64..2.0, seed in any::<u64>()) {
        let mut rng = SeedSpec::new(seed, 0).rng();
        let next = brownian_step(&phi, ds, &mut rng).unwrap();
        prop_assert_eq!(next.size(), phi.size());
        prop_assert!(next.phases().iter().all(|p| (0.0..std::f64::consts::TAU).contains(p)));
    }

    #[test]
    fn merged_accumulators_match_single_stream(
        xs in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..300),
        cut in 1usize..299,
    ) {
        let cut = cut.min(xs.len() - 1);
        let mut whole = Accumulator::new(3, true);
        xs.iter().for_each(|x| whole.push(x));
        let (mut a, mut b) = (Accumulator::new(3, true), Accumulator::new(3, true));
        xs[..cut].iter().for_each(|x| a.push(x));
        xs[cut..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        let scale = whole.variance().iter().cloned().fold(1.0, f64::max);
        for (u, v) in whole.mean().iter().zip(a.mean()) {
            prop_assert!((u - v).abs() < 1e-12 * 1e3);
        }
        for (u, v) in whole.covariance().unwrap().iter().zip(a.covariance().unwrap()) {
            prop_assert!((u - v).abs() < 1e-12 * scale);
        }
    }
}
