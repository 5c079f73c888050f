//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Run alone with `cargo test -p shiftlab --test acceptance`.

mod common;

use std::process::{Command, ExitCode};
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1};
use shiftlab::cli::config::{CovariateShiftParams, JdotParams, PriorShiftParams};
use shiftlab::cli::experiments::{aggregate_covariate, covariate_seed, jdot_seed, prior_shift_seed};
use shiftlab::covshift::{build_kmm_qp, kmm_weights, solve_qp, QpOptions};
use shiftlab::data::ProbVector;
use shiftlab::drift::{
    drift_detector, make_concept, simulate_tracking, tradeoff_sweep, ConceptKind, TrackingConfig, TrackingStrategy,
};
use shiftlab::jdot::{fictive_labels, jdot_fit, JdotConfig, PlanSolver};
use shiftlab::linalg::median;
use shiftlab::models::{fit_ridge, KernelSpec};
use shiftlab::ot::{plan_cost, solve_exact, solve_sinkhorn, wasserstein, CostMatrix, GroundMetric, SinkhornOptions};
use shiftlab::priorshift::{chi2_survival, em_run, em_step, likelihood_ratio_statistic, surrogate_log_likelihood};
use shiftlab::rng::SeededRng;
use shiftlab::{empirical_measure, DiscreteMeasure, LabeledDataset};

use common::{
    chi2_survival_by_quadrature, grid_argmax_two_class, lattice_minimum, pairwise_ridge_oracle, pearson,
    permutation_oracle, random_plan, random_posteriors,
};

/// Outcome of one criterion: the detail line and whether every check held.
struct Outcome {
    passed: bool,
    detail: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self {
            passed: true,
            detail: Vec::new(),
        }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.passed &= ok;
        self.detail.push(if ok { what } else { format!("FAILED {what}") });
    }
}

fn uniform(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

fn prior_shift_replication() -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let params = PriorShiftParams::default();
    let (record, _) = prior_shift_seed(&params, None, 0).unwrap();
    let m = &record.mean;
    let runs = record.runs.len();
    out.check(runs == 100, format!("{runs} runs"));
    out.check(
        (0.65..=0.75).contains(&m.acc_no_adjust),
        format!("unadjusted accuracy {:.3} in [0.65, 0.75]", m.acc_no_adjust),
    );
    let nominal = params.target_priors[0];
    out.check(
        (m.em_priors[0] - nominal).abs() <= 0.05 && (m.em_priors[0] - m.true_priors[0]).abs() <= 0.05,
        format!(
            "EM prior {:.3} vs {nominal} (realized {:.3})",
            m.em_priors[0], m.true_priors[0]
        ),
    );
    let gain = m.acc_em - m.acc_no_adjust;
    out.check(gain >= 0.04, format!("EM accuracy gain {:.3} >= 0.04", gain));
    let gap = (m.acc_true_priors - m.acc_em).abs();
    out.check(gap <= 0.03, format!("gap to true-prior correction {gap:.3} <= 0.03"));
    let secs = start.elapsed().as_secs_f64();
    out.check(secs < 120.0, format!("{secs:.1}s"));
    out
}

fn em_internals() -> Outcome {
    let mut out = Outcome::new();
    let post = ndarray::array![[0.8, 0.2], [0.6, 0.4]];
    let u = ProbVector::uniform(2);
    let (prior, _) = em_step(&post.view(), &u, &u).unwrap();
    let err = (prior[0] - 0.7).abs().max((prior[1] - 0.3).abs());
    out.check(err <= 1e-12, format!("hand example error {err:.1e}"));

    // Bayes posteriors for N(0,1) vs N(3,1) on a 20/80 target
    let mut rng = SeededRng::new(17);
    let mut bayes = Array2::zeros((2000, 2));
    for i in 0..2000 {
        let x = rng.normal() + if rng.bernoulli(0.8) { 3.0 } else { 0.0 };
        let p1 = 1.0 / (1.0 + (4.5 - 3.0 * x).exp());
        bayes[[i, 0]] = 1.0 - p1;
        bayes[[i, 1]] = p1;
    }
    let mut worst: f64 = 0.0;
    let mut instances = vec![(bayes, u.clone())];
    while instances.len() < 50 {
        let inst = random_posteriors(&mut rng);
        if inst.0.ncols() == 2 {
            instances.push(inst);
        }
    }
    for (post, prior) in &instances {
        let run = em_run(&post.view(), prior, 1e-12, 100_000).unwrap();
        let grid = grid_argmax_two_class(&post.view(), prior, 1e-4);
        worst = worst.max((run.final_priors[1] - grid).abs());
    }
    out.check(
        worst < 0.01,
        format!(
            "EM vs likelihood grid max gap {worst:.1e} on {} instances",
            instances.len()
        ),
    );

    let mut rng = SeededRng::new(2024);
    let mut decreases = 0;
    for _ in 0..1000 {
        let (post, prior) = random_posteriors(&mut rng);
        let run = em_run(&post.view(), &prior, 1e-9, 200).unwrap();
        let values: Vec<f64> = run
            .prior_trajectory
            .iter()
            .map(|t| surrogate_log_likelihood(&post.view(), &prior, t))
            .collect();
        decreases += values
            .windows(2)
            .filter(|w| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0))
            .count();
    }
    out.check(
        decreases == 0,
        format!("{decreases} likelihood decreases in 1000 trajectories"),
    );
    out
}

fn chi_square_test() -> Outcome {
    let mut out = Outcome::new();
    let mut worst: f64 = 0.0;
    for dof in 1..=10 {
        for i in 0..50 {
            let x = 0.1 + i as f64 * 0.6;
            worst = worst.max((chi2_survival(x, dof).unwrap() - chi2_survival_by_quadrature(x, dof)).abs());
        }
    }
    out.check(worst < 5e-4, format!("survival vs quadrature max error {worst:.1e}"));

    let mut rng = SeededRng::new(8);
    let mut spread: f64 = 0.0;
    let mut fixed_points = 0;
    while fixed_points < 200 {
        let (post, prior) = random_posteriors(&mut rng);
        let run = em_run(&post.view(), &prior, 1e-13, 100_000).unwrap();
        if !run.converged {
            continue;
        }
        fixed_points += 1;
        let (_, consistent) = em_step(&post.view(), &prior, &run.final_priors).unwrap();
        let stats: Vec<f64> = (0..prior.len())
            .filter(|&k| run.final_priors[k] > 1e-9)
            .map(|k| {
                likelihood_ratio_statistic(&post.view(), &consistent.view(), &prior, &run.final_priors, k).unwrap()
            })
            .collect();
        let (lo, hi) = stats
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
        spread = spread.max(hi - lo);
    }
    out.check(
        spread < 1e-6,
        format!("statistic spread across classes {spread:.1e} at 200 fixed points"),
    );
    out
}

fn gaussian_ratio_correlation(seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let source = Array2::from_shape_fn((500, 1), |_| rng.normal());
    let target = Array2::from_shape_fn((500, 1), |_| rng.normal() + 0.5);
    let kernel = KernelSpec::median_heuristic(&source.view(), &target.view()).unwrap();
    let sol = kmm_weights(&source.view(), &target.view(), &kernel, 1000.0).unwrap();
    let truth: Vec<f64> = source.column(0).iter().map(|x| (0.5 * x - 0.125).exp()).collect();
    pearson(sol.weights.as_slice(), &truth)
}

fn kernel_mean_matching() -> Outcome {
    let mut out = Outcome::new();
    let mut corr: Vec<f64> = (0..20).map(gaussian_ratio_correlation).collect();
    let med = median(&mut corr);
    out.check(med > 0.8, format!("weight/ratio correlation median {med:.3}"));

    let mut rng = SeededRng::new(31);
    let mut worst: f64 = 0.0;
    for case in 0..30 {
        let n = 3 + case % 3;
        let source = Array2::from_shape_fn((n, 2), |_| rng.normal());
        let targets = 1 + rng.below(6);
        let target = Array2::from_shape_fn((targets, 2), |_| rng.normal() + 0.7);
        let bound = rng.uniform_range(1.0, 4.0);
        let kernel = KernelSpec::gaussian(rng.uniform_range(0.5, 2.0)).unwrap();
        let qp = build_kmm_qp(&source.view(), &target.view(), &kernel, bound, None).unwrap();
        let sol = solve_qp(&qp, &QpOptions::default()).unwrap();
        let (lo, hi) = qp.sum_range();
        worst = worst.max((sol.objective - lattice_minimum(&qp.k_mat, &qp.k_vec, bound, lo, hi)).abs());
    }
    out.check(worst < 1e-2, format!("QP vs lattice max gap {worst:.1e}"));

    let params = CovariateShiftParams::default();
    let seeds: Vec<_> = (0..20).map(|s| covariate_seed(&params, None, s).unwrap().0).collect();
    let agg = aggregate_covariate(&seeds);
    let mut by_strength: Vec<_> = agg.iter().collect();
    by_strength.sort_by(|a, b| b.reg.total_cmp(&a.reg));
    for row in by_strength.iter().take(2) {
        out.check(
            row.mean_error_reduction >= 0.0,
            format!(
                "reg {}: error {:.3} -> {:.3}",
                row.reg, row.mean_error_unweighted, row.mean_error_kmm
            ),
        );
    }
    out
}

fn random_points(rng: &mut SeededRng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.normal())
}

fn random_measure(rng: &mut SeededRng) -> DiscreteMeasure {
    let n = 1 + rng.below(6);
    let pts = random_points(rng, n, 2);
    let w: Vec<f64> = (0..n).map(|_| rng.uniform() + 0.05).collect();
    DiscreteMeasure::normalized(pts, Array1::from(w)).unwrap()
}

fn optimal_transport() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = SeededRng::new(2024);
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let n = 1 + case % 6;
        let d = 1 + rng.below(3);
        let a = random_points(&mut rng, n, d);
        let b = random_points(&mut rng, n, d);
        let costs = CostMatrix::from_points(&a.view(), &b.view(), GroundMetric::Euclidean, 2.0).unwrap();
        let plan = solve_exact(&uniform(n).view(), &uniform(n).view(), &costs).unwrap();
        worst = worst.max((plan_cost(&plan, &costs).unwrap() - permutation_oracle(&costs.clone().into_inner())).abs());
    }
    out.check(worst < 1e-8, format!("exact vs permutations max gap {worst:.1e}"));

    let mut exact_dirac = true;
    for _ in 0..100 {
        let z = random_points(&mut rng, 1, 3);
        let w = random_points(&mut rng, 1, 3);
        let d = GroundMetric::Euclidean.distance(&z.row(0), &w.row(0));
        let got = wasserstein(
            &empirical_measure(z).unwrap(),
            &empirical_measure(w).unwrap(),
            GroundMetric::Euclidean,
            1.0,
        )
        .unwrap();
        exact_dirac &= got == d;
    }
    out.check(exact_dirac, "W(dirac, dirac) equals the ground distance".into());

    let mut violations = 0;
    for _ in 0..1000 {
        let (a, b, c) = (
            random_measure(&mut rng),
            random_measure(&mut rng),
            random_measure(&mut rng),
        );
        let ab = wasserstein(&a, &b, GroundMetric::Euclidean, 1.0).unwrap();
        let bc = wasserstein(&b, &c, GroundMetric::Euclidean, 1.0).unwrap();
        let ac = wasserstein(&a, &c, GroundMetric::Euclidean, 1.0).unwrap();
        violations += usize::from(ac > ab + bc + 1e-8);
    }
    out.check(
        violations == 0,
        format!("{violations} triangle violations in 1000 triples"),
    );

    let (mut max_violation, mut max_gap_ratio): (f64, f64) = (0.0, 0.0);
    for _ in 0..20 {
        let n = 4 + rng.below(12);
        let m = 4 + rng.below(12);
        let a = random_points(&mut rng, n, 2);
        let b = random_points(&mut rng, m, 2);
        let costs = CostMatrix::from_points(&a.view(), &b.view(), GroundMetric::Euclidean, 2.0).unwrap();
        let exact = plan_cost(
            &solve_exact(&uniform(n).view(), &uniform(m).view(), &costs).unwrap(),
            &costs,
        )
        .unwrap();
        let eps = 1e-3 * costs.mean();
        let opts = SinkhornOptions {
            epsilon: Some(eps),
            ..Default::default()
        };
        let res = solve_sinkhorn(&uniform(n).view(), &uniform(m).view(), &costs, &opts).unwrap();
        max_violation = max_violation.max(res.violation.0.max(res.violation.1));
        let gap = plan_cost(&res.plan(1e-6).unwrap(), &costs).unwrap() - exact;
        max_gap_ratio = max_gap_ratio.max(gap.abs() / eps);
    }
    out.check(
        max_violation < 1e-6,
        format!("Sinkhorn marginal violation {max_violation:.1e}"),
    );
    out.check(
        max_gap_ratio < 1.0,
        format!("Sinkhorn cost gap {max_gap_ratio:.2} x 1e-3 mean(C)"),
    );
    out
}

fn joint_transport() -> Outcome {
    let mut out = Outcome::new();
    let mut rng = SeededRng::new(31);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ms = 2 + rng.below(19);
        let mt = 2 + rng.below(19);
        let p = 1 + rng.below(3);
        let y: Vec<f64> = (0..ms).map(|_| rng.normal() * 2.0).collect();
        let target = Array2::from_shape_fn((mt, p), |_| rng.normal());
        let plan = random_plan(&mut rng, ms, mt);
        let reg = 10f64.powf(rng.uniform_range(-3.0, 0.0));
        let fictive = fictive_labels(&plan, &y).unwrap();
        let reduced = fit_ridge(
            &target.view(),
            &ArrayView1::from(&fictive),
            &Array1::ones(mt).view(),
            reg,
        )
        .unwrap();
        let (w, b) = pairwise_ridge_oracle(&plan.gamma(), &y, &target.view(), reg);
        for (a, o) in reduced.weights.iter().zip(&w) {
            worst = worst.max((a - o).abs());
        }
        worst = worst.max((reduced.intercept - b).abs());
    }
    out.check(
        worst < 1e-6,
        format!("fictive-label reduction max gap {worst:.1e} on 100 instances"),
    );

    let mut rng = SeededRng::new(32);
    let mut increases = 0;
    for _ in 0..100 {
        let ms = 3 + rng.below(18);
        let mt = 3 + rng.below(18);
        let p = 1 + rng.below(3);
        let x = Array2::from_shape_fn((ms, p), |_| rng.normal());
        let y: Vec<f64> = (0..ms).map(|i| x.row(i).sum() + 0.3 * rng.normal()).collect();
        let source = LabeledDataset::regression(x, y).unwrap();
        let target = Array2::from_shape_fn((mt, p), |_| rng.normal() * 1.5 + 0.5);
        let cfg = JdotConfig {
            plan_solver: PlanSolver::Exact,
            bcd_max_iter: 15,
            ..Default::default()
        };
        let fit = jdot_fit(&source, &target.view(), &cfg).unwrap();
        increases += fit.objective_trace.windows(2).filter(|w| w[1] > w[0] + 1e-9).count();
    }
    out.check(
        increases == 0,
        format!("{increases} objective increases over 100 exact-solver runs"),
    );

    let params = JdotParams::default();
    let mut ratios: Vec<f64> = (0..20)
        .map(|s| {
            let (r, _) = jdot_seed(&params, None, s).unwrap();
            r.mse_jdot / r.mse_naive
        })
        .collect();
    let med = median(&mut ratios);
    out.check(med < 0.5, format!("target MSE ratio median {med:.2e}"));
    out
}

fn drift_tracking() -> Outcome {
    let mut out = Outcome::new();
    let base = TrackingConfig {
        steps: 150,
        ..Default::default()
    };
    let seeds: Vec<u64> = (0..20).collect();
    let deltas = [0.0, 0.01, 0.05, 0.1, 0.2];
    let table = tradeoff_sweep(
        ConceptKind::RotatingHalfspace,
        &deltas,
        &[base.window],
        &seeds,
        &base,
        50,
    )
    .unwrap();
    let risks: Vec<f64> = table.median_risk.iter().map(|r| r[0]).collect();
    out.check(risks[0] < 0.05, format!("static tail risk {:.4}", risks[0]));
    let inversions = risks[1..].windows(2).filter(|w| w[1] < w[0]).count();
    let shown: Vec<String> = risks[1..].iter().map(|r| format!("{r:.3}")).collect();
    out.check(
        inversions <= 1,
        format!("risk over drift rates [{}], {inversions} inversions", shown.join(", ")),
    );

    let window = 5;
    let mut once = 0;
    for seed in 0..5 {
        let concept = make_concept(ConceptKind::AbruptSwitch, 0.0, seed).unwrap();
        let strategy = TrackingStrategy::DetectAndReset {
            detector_window: window,
            threshold: 0.2,
        };
        let cfg = TrackingConfig {
            steps: 120,
            eval_samples: 1000,
            seed,
            ..Default::default()
        };
        let trace = simulate_tracking(&concept, &strategy, &cfg).unwrap();
        let hit = trace.detections.len() == 1
            && (concept.switch_step..concept.switch_step + 2 * window).contains(&trace.detections[0]);
        once += usize::from(hit);
    }
    let mut stream = vec![0.05; 60];
    stream.extend(vec![0.5; 60]);
    let events = drift_detector(&stream, window, 0.2).unwrap();
    let exact = events.len() == 1 && (60..60 + 2 * window).contains(&events[0]);
    out.check(
        once == 5 && exact,
        format!("detector fired once within 2 windows in {once}/5 simulations"),
    );
    out
}

const RERUN_CONFIG: &str = r#"
scenario = "prior-shift"
seeds = [3, 4]
[prior_shift]
splits = 2
trainings = 3
target_size = 300
"#;

fn reproducibility(started: Instant) -> Outcome {
    let mut out = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    std::fs::write(&cfg, RERUN_CONFIG).unwrap();
    let mut identical = true;
    let mut outputs = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "2")] {
        let target = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_shiftlab"))
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&target)
            .env("SHIFTLAB_THREADS", threads)
            .output()
            .unwrap()
            .status;
        identical &= status.success();
        outputs.push(target);
    }
    for file in ["report.json", "trace.csv", "meta.json"] {
        identical &= std::fs::read(outputs[0].join(file)).ok() == std::fs::read(outputs[1].join(file)).ok();
    }
    out.check(identical, "CLI reruns byte-identical".into());
    let secs = started.elapsed().as_secs_f64();
    out.check(secs < 600.0, format!("acceptance run {secs:.0}s"));
    out
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let started = Instant::now();
    let criteria: [Criterion; 7] = [
        ("prior-shift replication", prior_shift_replication),
        ("EM internals", em_internals),
        ("chi-square test", chi_square_test),
        ("kernel mean matching", kernel_mean_matching),
        ("optimal transport", optimal_transport),
        ("joint distribution OT", joint_transport),
        ("drift tracking", drift_tracking),
    ];
    let mut all = true;
    let mut report = |n: usize, name: &str, o: Outcome| {
        all &= o.passed;
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} [{verdict}] {name}: {}", o.detail.join("; "));
    };
    for (i, (name, f)) in criteria.iter().enumerate() {
        report(i + 1, name, f());
    }
    report(8, "reproducibility", reproducibility(started));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
