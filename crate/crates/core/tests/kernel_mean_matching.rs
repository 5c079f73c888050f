mod common;

use common::{lattice_minimum, pearson};
use ndarray::{Array1, Array2};
use shiftlab::covshift::{build_kmm_qp, kmm_weights, solve_qp, QpOptions, QuadraticProgram};
use shiftlab::models::KernelSpec;
use shiftlab::rng::SeededRng;

fn points(rng: &mut SeededRng, n: usize, shift: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, 2), |_| rng.normal() + shift)
}

#[test]
fn solver_matches_lattice_oracle() {
    let mut rng = SeededRng::new(31);
    for case in 0..30 {
        let n = 3 + case % 3;
        let source = points(&mut rng, n, 0.0);
        let targets = 1 + rng.below(6);
        let target = points(&mut rng, targets, 0.7);
        let bound = rng.uniform_range(1.0, 4.0);
        let kernel = KernelSpec::gaussian(rng.uniform_range(0.5, 2.0)).unwrap();
        let qp = build_kmm_qp(&source.view(), &target.view(), &kernel, bound, None).unwrap();
        let sol = solve_qp(&qp, &QpOptions::default()).unwrap();
        assert!(qp.is_feasible(&sol.weights.view(), 1e-9));
        let (lo, hi) = qp.sum_range();
        let oracle = lattice_minimum(&qp.k_mat, &qp.k_vec, bound, lo, hi);
        assert!(
            (sol.objective - oracle).abs() < 1e-2,
            "case {case}: solver {} vs lattice {oracle}",
            sol.objective
        );
    }
}

#[test]
fn solver_objective_trace_is_monotone() {
    let mut rng = SeededRng::new(4);
    let source = points(&mut rng, 80, 0.0);
    let target = points(&mut rng, 60, 1.0);
    let kernel = KernelSpec::median_heuristic(&source.view(), &target.view()).unwrap();
    let sol = kmm_weights(&source.view(), &target.view(), &kernel, 1000.0).unwrap();
    for w in sol.objective_trace.windows(2) {
        assert!(w[1] <= w[0]);
    }
    let mean = sol.weights.mean();
    assert!((mean - 1.0).abs() <= shiftlab::covshift::default_budget(80) + 1e-9);
    assert!(sol.weights.as_slice().iter().all(|&w| (0.0..=1000.0).contains(&w)));
}

/// Correlation between KMM weights and the exact ratio N(0.5,1)/N(0,1) for
/// one seed, with 500 draws per side.
fn gaussian_ratio_correlation(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let m = 500;
    let source = Array2::from_shape_fn((m, 1), |_| rng.normal());
    let target = Array2::from_shape_fn((m, 1), |_| rng.normal() + 0.5);
    let kernel = KernelSpec::median_heuristic(&source.view(), &target.view()).unwrap();
    let sol = kmm_weights(&source.view(), &target.view(), &kernel, 1000.0).unwrap();
    let truth: Vec<f64> = source.column(0).iter().map(|x| (0.5 * x - 0.125).exp()).collect();
    pearson(sol.weights.as_slice(), &truth)
}

#[test]
fn weights_track_the_true_density_ratio() {
    let mut corr: Vec<f64> = (0..20).map(gaussian_ratio_correlation).collect();
    corr.sort_by(f64::total_cmp);
    let median = 0.5 * (corr[9] + corr[10]);
    assert!(median > 0.8, "median correlation {median}, all {corr:?}");
}

#[test]
fn infeasible_budget_is_rejected() {
    let k = Array2::eye(3);
    let v = Array1::ones(3);
    // the box caps the sum at 0.3, below the budget band
    assert!(QuadraticProgram::new(k, v, 0.1, 0.1).is_err());
}
