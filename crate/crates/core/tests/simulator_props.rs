use fracstable::integrability::QuadratureConfig;
use fracstable::oracle::char_exponent;
use fracstable::simulator::{
    default_theta_grid, empirical_scale, simulate_paths, simulate_with, Discretization, SimulationGrid,
};
use fracstable::{registry, KernelSpec, StableParams};

fn tent() -> KernelSpec {
    registry::build("tent", StableParams::new(1.6, 0.5).unwrap()).unwrap()
}

fn on_threads<T: Send>(n: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .unwrap()
        .install(f)
}

/// Mean of `cos(theta . X)` over the paths and its standard error.
fn ecf(paths: &[&[f64]], theta: &[f64]) -> (f64, f64) {
    let vals: Vec<f64> = paths
        .iter()
        .map(|x| x.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>().cos())
        .collect();
    let n = vals.len() as f64;
    let m = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn thread_count_does_not_change_paths() {
    let spec = registry::build("indicator", StableParams::new(1.6, 0.5).unwrap()).unwrap();
    let mut grid = SimulationGrid::new(vec![0.0, 0.5, 1.0], 11);
    grid.u_cells = 600;
    let a = on_threads(1, || simulate_paths(&spec, &grid, 2000).unwrap());
    let b = on_threads(3, || simulate_paths(&spec, &grid, 2000).unwrap());
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
    // every path starts at zero
    assert!(a.column(0).iter().all(|x| *x == 0.0));
    grid.seed = 12;
    let c = simulate_paths(&spec, &grid, 2000).unwrap();
    assert_ne!(a.values, c.values);
}

/// One 1e5-path tent ensemble at t = (1, 2), checked against the quadrature
/// exponent marginally and jointly, and against a finer u-grid.
#[test]
fn tent_ensemble_matches_quadrature() {
    const N: usize = 100_000;
    let spec = tent();
    let grid = SimulationGrid::new(vec![1.0, 2.0], 5);
    let disc = Discretization::build(&spec, &grid).unwrap();
    let e = simulate_with(&spec, &grid, &disc, N).unwrap();
    let paths: Vec<&[f64]> = (0..N).map(|i| e.path(i)).collect();
    let cfg = QuadratureConfig {
        rel_tol: 1e-5,
        ..Default::default()
    };

    // -log|phi(1)| of X(1) against Psi((1), (1))
    let psi = char_exponent(&spec, &[1.0], &[1.0], &cfg).unwrap().value;
    let (m, se) = ecf(&paths, &[1.0, 0.0]);
    let (got, got_se) = (-m.ln(), se / m);
    assert!(
        (got - psi).abs() <= 3.0 * got_se,
        "marginal: {got} +- {got_se} vs {psi}"
    );

    for theta in [[0.6, -0.4], [-0.5, 0.35], [0.3, 0.3]] {
        let psi = char_exponent(&spec, &[1.0, 2.0], &theta, &cfg).unwrap().value;
        let (m, se) = ecf(&paths, &theta);
        let want = (-psi).exp();
        assert!((m - want).abs() <= 3.0 * se, "theta {theta:?}: {m} +- {se} vs {want}");
    }

    // halving the u-cells' width moves the discretised scale by less than the noise
    let s = empirical_scale(&e, 0, &default_theta_grid(&e.column(0)).unwrap()).unwrap();
    let mut fine_grid = grid.clone();
    fine_grid.u_cells *= 2;
    let fine = Discretization::build(&spec, &fine_grid).unwrap();
    let (coarse_s, fine_s) = (disc.scale(&[1.0, 0.0]), fine.scale(&[1.0, 0.0]));
    assert!((coarse_s - fine_s).abs() < s.se, "{coarse_s} vs {fine_s}, se {}", s.se);
}

#[test]
fn bad_grids_are_rejected() {
    let spec = tent();
    let mut g = SimulationGrid::new(vec![1.0, 0.5], 1);
    assert!(simulate_paths(&spec, &g, 10).is_err());
    g.t_grid = vec![1.0];
    g.u_max = 2.0;
    assert!(simulate_paths(&spec, &g, 10).is_err());
    let mut g = SimulationGrid::new(vec![1.0], 1);
    g.v_cells = 0;
    assert!(simulate_paths(&spec, &g, 10).is_err());
}
