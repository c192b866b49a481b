use fracstable::flow::{
    apply_flow, circular_distance, cocycle_eval, generation_residual, random_grid, random_samples,
    semi_additive_2_eval, verify_cocycle, verify_flow_identity, verify_semi_additive_1, verify_semi_additive_2,
    CyclicFlow, FlowAtom, FlowTriple,
};
use fracstable::{registry, StableParams};
use proptest::prelude::*;

fn atom() -> impl Strategy<Value = FlowAtom> {
    (0.1f64..8.0, prop_oneof![-4.0f64..-0.2, 0.2f64..4.0]).prop_map(|(q, s)| FlowAtom { q, s })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn returns_after_whole_periods(a in atom(), vf in 0.0f64..1.0, k in -20i32..=20) {
        let flow = CyclicFlow::new(vec![a]).unwrap();
        let v = vf * a.q;
        let c = (f64::from(k) * a.q / a.s.abs()).exp();
        let w = apply_flow(&flow, 0, v, c).unwrap();
        let tol = 1e-12 * (1.0 + f64::from(k.abs()) * a.q);
        prop_assert!(circular_distance(v, w, a.q) <= tol, "{v} -> {w}");
        // a whole period never changes the sign cocycle for b1 = 1
        let triple = FlowTriple::randomized(flow, &[1], 3).unwrap();
        if k != 0 {
            prop_assert_eq!(cocycle_eval(&triple, 0, v, c).unwrap(), 1.0);
        }
    }

    #[test]
    fn functional_equations_hold(atoms in prop::collection::vec(atom(), 1..4), seed in 0u64..1000, flip in any::<bool>()) {
        let flow = CyclicFlow::new(atoms).unwrap();
        let b1: Vec<i8> = (0..flow.atoms.len()).map(|i| if flip && i % 2 == 0 { -1 } else { 1 }).collect();
        let triple = FlowTriple::randomized(flow.clone(), &b1, seed).unwrap();
        let samples = random_samples(&flow, 500, seed + 1);
        prop_assert!(verify_flow_identity(&flow, &samples).unwrap() <= 1e-12);
        prop_assert!(verify_cocycle(&triple, &samples).unwrap() <= 1e-12);
        prop_assert!(verify_semi_additive_1(&triple, &samples).unwrap() <= 1e-12);
        for h in [0.5, 1.0 / 1.6, 0.8] {
            let p = StableParams::new(1.6, h).unwrap();
            prop_assert!(verify_semi_additive_2(&triple, &p, &samples).unwrap() <= 1e-12);
        }
    }
}

#[test]
fn registry_kernels_are_generated_by_their_flow() {
    for (i, name) in registry::NAMES.iter().enumerate() {
        for h in [0.3, 0.5, 1.0 / 1.6, 0.8] {
            let spec = registry::build(name, StableParams::new(1.6, h).unwrap()).unwrap();
            let grid = random_grid(&spec, 400, 40 + i as u64);
            let r = generation_residual(&spec, &[0.3, 0.5, 2.0, std::f64::consts::E, 11.0], &grid).unwrap();
            assert!(r.residual <= 1e-12, "{name} H = {h}: {}", r.residual);
        }
    }
}

#[test]
fn log_branch_functional_is_a_multiple_of_the_bracket() {
    // b1 = 1, kappa = 0, j = 0 and j1 = 2 on q = 1: j_c(v) = 2 [v + ln c]
    let flow = CyclicFlow::new(vec![FlowAtom { q: 1.0, s: 1.0 }]).unwrap();
    let mut triple = FlowTriple::randomized(flow, &[1], 0).unwrap();
    let g = &mut triple.generators[0];
    g.sign_cuts.clear();
    g.j = fracstable::Profile::zero();
    g.j1 = 2.0;
    let p = StableParams::new(1.6, 1.0 / 1.6).unwrap();
    for (v, c) in [(0.2, 1.5), (0.9, 0.1), (0.0, 30.0)] {
        let want = 2.0 * (v + f64::ln(c)).floor();
        assert_eq!(semi_additive_2_eval(&triple, &p, 0, v, c).unwrap(), want);
    }
}

#[test]
fn bad_flow_arguments() {
    assert!(CyclicFlow::new(vec![FlowAtom { q: 0.0, s: 1.0 }]).is_err());
    assert!(CyclicFlow::new(vec![FlowAtom { q: 1.0, s: 0.0 }]).is_err());
    let flow = CyclicFlow::new(vec![FlowAtom { q: 1.0, s: 1.0 }]).unwrap();
    assert!(apply_flow(&flow, 0, 1.0, 2.0).is_err());
    assert!(apply_flow(&flow, 0, 0.5, -1.0).is_err());
    assert!(apply_flow(&flow, 1, 0.5, 2.0).is_err());
}
