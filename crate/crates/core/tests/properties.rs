use proptest::prelude::*;

use sselab::dynamics::{DriftMode, Equation, OperatorSet, Propagator, Scheme};
use sselab::ensemble::EnsembleAccumulator;
use sselab::error::Error;
use sselab::hilbert::{outer_product, trace_distance, Operator, StateVector, C64};
use sselab::noise::{KernelPair, NoiseSampler, TimeGrid};

fn state(dim: usize) -> impl Strategy<Value = StateVector> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim)
        .prop_filter("nonzero", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
        .prop_map(|v| {
            let z: Vec<C64> = v.into_iter().map(|(a, b)| C64::new(a, b)).collect();
            StateVector::from_slice(&z).unwrap().normalized()
        })
}

fn hermitian(dim: usize) -> impl Strategy<Value = Operator> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim * dim).prop_map(move |v| {
        let mut rows = vec![vec![C64::new(0.0, 0.0); dim]; dim];
        for i in 0..dim {
            for j in 0..dim {
                let (a, b) = v[i * dim + j];
                if i == j {
                    rows[i][i] = C64::new(a, 0.0);
                } else if i < j {
                    rows[i][j] = C64::new(a, b);
                    rows[j][i] = C64::new(a, -b);
                }
            }
        }
        let refs: Vec<&[C64]> = rows.iter().map(Vec::as_slice).collect();
        Operator::from_rows(&refs).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pure_state_trace_distance_matches_overlap(a in state(3), b in state(3)) {
        let d = trace_distance(&outer_product(&a), &outer_product(&b)).unwrap();
        let expected = (1.0 - a.overlap_sqr(&b)).max(0.0).sqrt();
        prop_assert!((d - expected).abs() < 1e-9, "{d} vs {expected}");
    }

    #[test]
    fn trace_distance_is_a_bounded_metric(a in state(2), b in state(2), c in state(2)) {
        let (ra, rb, rc) = (outer_product(&a), outer_product(&b), outer_product(&c));
        let ab = trace_distance(&ra, &rb).unwrap();
        prop_assert!((ab - trace_distance(&rb, &ra).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(trace_distance(&ra, &ra).unwrap() < 1e-12);
        let ac = trace_distance(&ra, &rc).unwrap();
        let cb = trace_distance(&rc, &rb).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn pure_states_have_unit_trace_and_purity(a in state(4)) {
        let rho = outer_product(&a);
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-12);
        prop_assert!((rho.purity() - 1.0).abs() < 1e-12);
        prop_assert!(rho.is_hermitian(0.0));
        prop_assert!(rho.min_eigenvalue() > -1e-12);
    }

    #[test]
    fn expectations_of_hermitian_operators_are_real(a in state(3), h in hermitian(3)) {
        let e = a.expectation(&h);
        prop_assert!(e.im.abs() < 1e-12);
        let rho = outer_product(&a);
        prop_assert!((rho.expectation(&h) - e).norm() < 1e-12);
    }

    #[test]
    fn commutator_is_antisymmetric(x in hermitian(2), y in hermitian(2)) {
        let sum = x.commutator(&y).add(&y.commutator(&x));
        prop_assert!(sum.max_abs() < 1e-14);
    }

    #[test]
    fn rotated_real_white_noise_is_realizable_and_real(phi in 0.0f64..std::f64::consts::TAU, seed in 0u64..1000) {
        let grid = TimeGrid::uniform(0.0, 0.01, 20, 20).unwrap();
        let sampler = NoiseSampler::new(&KernelPair::rotated_real_white(1, phi), &grid).unwrap();
        let path = sampler.sample(seed, 0);
        let rot = C64::from_polar(1.0, -phi);
        for k in 0..grid.len() {
            let z = path.value(0, k);
            prop_assert!((rot * z).im.abs() <= 1e-9 * z.norm().max(1.0));
        }
    }

    #[test]
    fn ou_pseudo_covariance_realizability(r in 0.0f64..0.99, arg in 0.0f64..std::f64::consts::TAU, excess in 0.05f64..2.0) {
        let grid = TimeGrid::uniform(0.0, 0.1, 10, 10).unwrap();
        prop_assert!(NoiseSampler::new(&KernelPair::general_ou(1, 2.0, C64::from_polar(r, arg)), &grid).is_ok());
        let bad = KernelPair::general_ou(1, 2.0, C64::from_polar(1.0 + excess, arg));
        let rejected = matches!(NoiseSampler::new(&bad, &grid), Err(Error::NotPositiveSemidefinite { .. }));
        prop_assert!(rejected);
    }

    #[test]
    fn halving_keeps_checkpoint_times(dt in 1e-3f64..0.1, n in 1usize..50, stride in 1usize..10) {
        let g = TimeGrid::uniform(0.0, dt, n * stride, stride).unwrap();
        let h = g.halved();
        for (a, b) in g.checkpoint_times().iter().zip(h.checkpoint_times()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
        let back = h.coarsened(2).unwrap();
        prop_assert_eq!(back.checkpoint_times(), g.checkpoint_times());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn accumulator_merge_is_order_independent(split in prop::collection::vec(any::<bool>(), 12)) {
        let grid = TimeGrid::uniform(0.0, 0.01, 20, 5).unwrap();
        let p = Propagator::new(
            Equation::LinearWhite,
            &OperatorSet::qubit_sigma_z(),
            &KernelPair::real_white(1),
            DriftMode::GeneralFromKernel,
            &grid,
            Scheme::Rk4,
        )
        .unwrap();
        let psi0 = StateVector::uniform(2);
        let times = grid.checkpoint_times();
        let mut whole = EnsembleAccumulator::new(2, times.clone());
        let mut left = EnsembleAccumulator::new(2, times.clone());
        let mut right = EnsembleAccumulator::new(2, times.clone());
        for (i, &to_left) in split.iter().enumerate() {
            let rec = p.run(&psi0, 9, i as u64).unwrap();
            whole.push(rec.clone()).unwrap();
            if to_left { left.push(rec).unwrap() } else { right.push(rec).unwrap() }
        }
        let lr = left.clone().merge(right.clone()).unwrap();
        let rl = right.merge(left).unwrap();
        for k in 0..times.len() {
            prop_assert_eq!(lr.raw_rho(k), whole.raw_rho(k));
            prop_assert_eq!(rl.raw_rho(k), whole.raw_rho(k));
            prop_assert_eq!(lr.mean_sq_norm(k), whole.mean_sq_norm(k));
        }
        let doubled = whole.clone().merge(whole);
        prop_assert!(doubled.is_err());
    }
}
