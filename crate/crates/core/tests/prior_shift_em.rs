mod common;

use common::{chi2_survival_by_quadrature, grid_argmax_two_class, random_posteriors};
use ndarray::Array2;
use shiftlab::data::ProbVector;
use shiftlab::priorshift::{
    adapt_posteriors, chi2_survival, em_run, em_step, likelihood_ratio_statistic, surrogate_log_likelihood,
    PriorShiftOptions,
};
use shiftlab::rng::SeededRng;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Bayes posteriors under equal source priors for N(0,1) vs N(3,1), on a
/// target drawn with class-1 prior `target_prior`.
fn gaussian_pair_posteriors(m: usize, target_prior: f64, seed: u64) -> Array2<f64> {
    let mut rng = SeededRng::new(seed);
    let mut out = Array2::zeros((m, 2));
    for i in 0..m {
        let x = rng.normal() + if rng.bernoulli(target_prior) { 3.0 } else { 0.0 };
        let p1 = sigmoid(3.0 * x - 4.5);
        out[[i, 0]] = 1.0 - p1;
        out[[i, 1]] = p1;
    }
    out
}

#[test]
fn em_step_hand_example() {
    let post = ndarray::array![[0.8, 0.2], [0.6, 0.4]];
    let uniform = ProbVector::uniform(2);
    let (prior, _) = em_step(&post.view(), &uniform, &uniform).unwrap();
    assert!((prior[0] - 0.7).abs() < 1e-12 && (prior[1] - 0.3).abs() < 1e-12);
}

#[test]
fn em_limit_matches_likelihood_grid() {
    let post = gaussian_pair_posteriors(2000, 0.8, 17);
    let prior = ProbVector::uniform(2);
    let run = em_run(&post.view(), &prior, 1e-10, 10_000).unwrap();
    assert!(run.converged);
    let em = run.final_priors[1];
    assert!((em - 0.8).abs() < 0.05, "EM prior {em}");
    let grid = grid_argmax_two_class(&post.view(), &prior, 1e-3);
    assert!((em - grid).abs() < 0.01, "EM {em} vs grid {grid}");
}

#[test]
fn em_limit_matches_grid_on_random_posteriorss() {
    let mut rng = SeededRng::new(99);
    let mut checked = 0;
    while checked < 50 {
        let (post, prior) = random_posteriors(&mut rng);
        if post.ncols() != 2 {
            continue;
        }
        checked += 1;
        let run = em_run(&post.view(), &prior, 1e-12, 100_000).unwrap();
        let grid = grid_argmax_two_class(&post.view(), &prior, 1e-4);
        assert!(
            (run.final_priors[1] - grid).abs() < 0.01,
            "EM {} vs grid {grid}",
            run.final_priors[1]
        );
    }
}

/// The M-step maximizes Σᵢ Σ_k q_ik log θ_k over the simplex.
#[test]
fn m_step_maximizes_expected_complete_log_likelihood() {
    let mut rng = SeededRng::new(5);
    for _ in 0..20 {
        let (post, prior) = loop {
            let inst = random_posteriors(&mut rng);
            if inst.0.ncols() == 3 {
                break inst;
            }
        };
        let old = ProbVector::normalized((0..3).map(|_| rng.uniform_range(0.1, 1.0)).collect()).unwrap();
        let (new, q) = em_step(&post.view(), &prior, &old).unwrap();
        let q_sums = q.sum_axis(ndarray::Axis(0));
        let objective = |t: [f64; 3]| -> f64 {
            (0..3)
                .map(|k| if q_sums[k] > 0.0 { q_sums[k] * t[k].ln() } else { 0.0 })
                .sum()
        };
        let mut best = ([0.0; 3], f64::NEG_INFINITY);
        for i in 1..100 {
            for j in 1..(100 - i) {
                let t = [i as f64 / 100.0, j as f64 / 100.0, (100 - i - j) as f64 / 100.0];
                let v = objective(t);
                if v > best.1 {
                    best = (t, v);
                }
            }
        }
        for k in 0..3 {
            assert!((new[k] - best.0[k]).abs() < 0.02, "{new:?} vs {:?}", best.0);
        }
    }
}

#[test]
fn surrogate_likelihood_never_decreases() {
    let mut rng = SeededRng::new(2024);
    for case in 0..1000 {
        let (post, prior) = random_posteriors(&mut rng);
        let run = em_run(&post.view(), &prior, 1e-9, 200).unwrap();
        let values: Vec<f64> = run
            .prior_trajectory
            .iter()
            .map(|t| surrogate_log_likelihood(&post.view(), &prior, t))
            .collect();
        for w in values.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "case {case}: {} -> {}",
                w[0],
                w[1]
            );
        }
        for row in run.target_posteriors.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn statistic_is_class_independent_at_fixed_points() {
    let mut rng = SeededRng::new(8);
    let mut checked = 0;
    for _ in 0..200 {
        let (post, prior) = random_posteriors(&mut rng);
        let run = em_run(&post.view(), &prior, 1e-13, 100_000).unwrap();
        let (again, consistent) = em_step(&post.view(), &prior, &run.final_priors).unwrap();
        if !run.converged {
            continue;
        }
        checked += 1;
        for k in 0..prior.len() {
            assert!((again[k] - run.final_priors[k]).abs() < 1e-6);
        }
        let stats: Vec<f64> = (0..prior.len())
            .filter(|&k| run.final_priors[k] > 1e-9)
            .map(|k| {
                likelihood_ratio_statistic(&post.view(), &consistent.view(), &prior, &run.final_priors, k).unwrap()
            })
            .collect();
        for s in &stats {
            assert!((s - stats[0]).abs() < 1e-6, "{stats:?}");
        }
    }
    assert!(checked > 150, "only {checked} runs converged");
}

#[test]
fn adapted_result_is_consistent() {
    let post = gaussian_pair_posteriors(500, 0.3, 3);
    let res = adapt_posteriors(&post.view(), &ProbVector::uniform(2), &PriorShiftOptions::default()).unwrap();
    assert!(res.significant);
    assert!((res.chi2_variate - 2.0 * res.test_statistic.abs()).abs() < 1e-12);
    let mean = res.target_posteriors().mean_axis(ndarray::Axis(0)).unwrap();
    assert!((mean[1] - res.final_priors()[1]).abs() < 1e-6);
}

#[test]
fn chi2_survival_matches_quadrature() {
    for dof in 1..=10 {
        for i in 0..50 {
            let x = 0.1 + i as f64 * 0.6;
            let ours = chi2_survival(x, dof).unwrap();
            let oracle = chi2_survival_by_quadrature(x, dof);
            assert!((ours - oracle).abs() < 5e-4, "dof {dof}, x {x}: {ours} vs {oracle}");
        }
    }
}

#[test]
fn chi2_survival_known_points() {
    // dof 2 has the closed form exp(-x/2)
    for x in [0.5, 1.0, 3.0, 10.0] {
        assert!((chi2_survival(x, 2).unwrap() - (-x / 2.0f64).exp()).abs() < 1e-12);
    }
    assert!((chi2_survival(3.841_458_820_694_124, 1).unwrap() - 0.05).abs() < 1e-9);
    assert_eq!(chi2_survival(0.0, 3).unwrap(), 1.0);
    assert!(chi2_survival(1.0, 0).is_err());
    assert!(chi2_survival(-1.0, 1).is_err());
}
