use proptest::prelude::*;
use simplex_stdp::dynamics::{decompose_step, run_trajectory, step_probabilities, DynamicsConfig, InitialState, StepSample};
use simplex_stdp::flow::{integrate, Fitness, FlowSpec};
use simplex_stdp::mirror::entropic_step;
use simplex_stdp::simplex::{
    loss, loss_gradient, probabilities_from_weights, replicator_field, IntensityVector, ProbabilityVector, WeightVector,
};

fn simplex_point(d: usize) -> impl Strategy<Value = ProbabilityVector> {
    prop::collection::vec(1e-3f64..1.0, d).prop_map(|v| ProbabilityVector::normalized(v).unwrap())
}

fn point_and_y() -> impl Strategy<Value = (ProbabilityVector, usize, Vec<f64>)> {
    (2usize..7).prop_flat_map(|d| (simplex_point(d), 0..d, prop::collection::vec(-1.0f64..1.0, d)))
}

fn sum(p: &[f64]) -> f64 {
    p.iter().sum()
}

proptest! {
    #[test]
    fn step_stays_on_the_simplex((p, i, z) in point_and_y(), alpha in 1e-4f64..0.49) {
        let y = StepSample::new(i, z).combined;
        let next = step_probabilities(&p, alpha, &y).unwrap();
        prop_assert!((sum(next.as_slice()) - 1.0).abs() < 1e-12);
        prop_assert!(next.as_slice().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn zero_coordinates_stay_zero((p, i, z) in point_and_y(), alpha in 1e-4f64..0.49) {
        let mut v = p.into_inner();
        v[0] = 0.0;
        let p = ProbabilityVector::normalized(v).unwrap();
        let next = step_probabilities(&p, alpha, &StepSample::new(i, z).combined).unwrap();
        prop_assert_eq!(next[0], 0.0);
    }

    #[test]
    fn vertices_are_absorbing(d in 2usize..7, i in 0usize..7, alpha in 1e-4f64..0.49, seed in any::<u64>()) {
        let v = ProbabilityVector::vertex(d, i % d);
        let config = DynamicsConfig::new(InitialState::Probabilities(v.clone()), alpha, 50);
        let record = run_trajectory(&config, seed).unwrap();
        prop_assert_eq!(record.final_state(), &v);
    }

    #[test]
    fn decomposition_rebuilds_the_step((p, i, z) in point_and_y(), alpha in 1e-4f64..0.4) {
        let y = StepSample::new(i, z).combined;
        let next = step_probabilities(&p, alpha, &y).unwrap();
        let dec = decompose_step(&p, alpha, &y, 2.0).unwrap();
        for j in 0..p.dim() {
            let rebuilt = p[j] + alpha * dec.drift[j] - alpha * dec.xi[j] - dec.theta[j];
            prop_assert!((rebuilt - next[j]).abs() < 1e-13);
            prop_assert!(dec.theta[j].abs() <= dec.theta_bound[j]);
        }
        prop_assert!(sum(&dec.drift).abs() < 1e-15);
        prop_assert!(sum(&dec.xi).abs() < 1e-14);
    }

    #[test]
    fn replicator_field_is_tangent(p in (2usize..8).prop_flat_map(simplex_point)) {
        let field = replicator_field(p.as_slice(), p.as_slice());
        prop_assert!(sum(&field).abs() < 1e-15);
    }

    #[test]
    fn loss_is_bounded_by_its_extremes(p in (2usize..8).prop_flat_map(simplex_point)) {
        let d = p.dim() as f64;
        let l = loss(p.as_slice());
        prop_assert!(l >= -1.0 / 12.0 - 1e-15);
        prop_assert!(l <= -(1.0 / 3.0) / (d * d) + 0.25 / (d * d) + 1e-15);
    }

    #[test]
    fn gradient_is_tangent_at_barycenters(d in 1usize..9, k in 1usize..9) {
        let k = k.min(d);
        let mut v = vec![0.0; d];
        v[..k].fill(1.0 / k as f64);
        let g = loss_gradient(&v);
        prop_assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn weight_scale_does_not_change_probabilities(
        w in prop::collection::vec(0.1f64..10.0, 3),
        c in 0.01f64..100.0,
    ) {
        let lambda = IntensityVector::new(vec![10.0, 7.5, 5.0]).unwrap();
        let a = probabilities_from_weights(&lambda, &WeightVector::new(w.clone()).unwrap()).unwrap();
        let b = probabilities_from_weights(&lambda, &WeightVector::new(w.iter().map(|x| x * c).collect()).unwrap()).unwrap();
        for j in 0..3 {
            prop_assert!((a[j] - b[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn entropic_step_stays_on_the_simplex(p in (2usize..7).prop_flat_map(simplex_point), alpha in 1e-4f64..1.0) {
        let g = loss_gradient(p.as_slice());
        let next = entropic_step(&p, alpha, &g).unwrap();
        prop_assert!((sum(next.as_slice()) - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn flow_decreases_the_loss(p in (2usize..6).prop_flat_map(simplex_point)) {
        let traj = integrate(&FlowSpec::new(Fitness::SelfFitness, p, 3.0, 1e-2)).unwrap();
        for w in traj.states.windows(2) {
            prop_assert!(loss(w[1].as_slice()) <= loss(w[0].as_slice()) + 1e-14);
            prop_assert!((sum(w[1].as_slice()) - 1.0).abs() < 1e-12);
        }
    }
}
