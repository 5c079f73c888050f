//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView2, Axis};
use shiftlab::ot::TransportPlan;
use shiftlab::rng::SeededRng;
use shiftlab::ProbVector;

/// Minimum over all permutations of `Σ C[i, σ(i)] / n`, by Heap's algorithm.
pub fn permutation_oracle(costs: &Array2<f64>) -> f64 {
    let n = costs.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut stack = vec![0usize; n];
    let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| costs[[i, j]]).sum::<f64>();
    let mut best = eval(&perm);
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(eval(&perm));
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

/// Dense plan whose columns each carry exactly `1/s`; rows take whatever mass
/// results.
pub fn random_plan(rng: &mut SeededRng, r: usize, s: usize) -> TransportPlan {
    let mut gamma = Array2::from_shape_fn((r, s), |_| rng.uniform() + 0.01);
    for mut col in gamma.columns_mut() {
        let total = col.sum();
        col.mapv_inplace(|v| v / total / s as f64);
    }
    let rows = ProbVector::normalized(gamma.sum_axis(Axis(1)).to_vec()).unwrap();
    TransportPlan::new(gamma, rows, ProbVector::uniform(s), 1e-12).unwrap()
}

/// Gradient descent on `Σᵢⱼ γᵢⱼ (yᵢ − w·x'ⱼ − b)² + reg·‖w‖²` over all pairs.
pub fn pairwise_ridge_oracle(
    gamma: &ArrayView2<f64>,
    y: &[f64],
    target: &ArrayView2<f64>,
    reg: f64,
) -> (Vec<f64>, f64) {
    let (ms, mt) = gamma.dim();
    let p = target.ncols();
    let mut w = vec![0.0; p];
    let mut b = 0.0;
    // Lipschitz bound of the gradient
    let mut lip = 2.0 * reg;
    for j in 0..mt {
        let col: f64 = (0..ms).map(|i| gamma[[i, j]]).sum();
        lip += 2.0 * col * (1.0 + target.row(j).iter().map(|v| v * v).sum::<f64>());
    }
    let step = 1.0 / lip;
    for _ in 0..2_000_000 {
        let mut gw = vec![0.0; p];
        let mut gb = 0.0;
        for i in 0..ms {
            for j in 0..mt {
                let x = target.row(j);
                let pred = b + w.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>();
                let r = -2.0 * gamma[[i, j]] * (y[i] - pred);
                gb += r;
                for k in 0..p {
                    gw[k] += r * x[k];
                }
            }
        }
        for k in 0..p {
            gw[k] += 2.0 * reg * w[k];
        }
        let norm = (gb * gb + gw.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm < 1e-13 {
            break;
        }
        b -= step * gb;
        for k in 0..p {
            w[k] -= step * gw[k];
        }
    }
    (w, b)
}

/// Minimum of `½wᵀKw − kᵀw` over the feasible set, by exhaustive search on a
/// lattice that is repeatedly narrowed around the incumbent. The problem is
/// convex, so the narrowing cannot leave the basin.
pub fn lattice_minimum(k_mat: &Array2<f64>, k_vec: &Array1<f64>, bound: f64, lo: f64, hi: f64) -> f64 {
    let n = k_vec.len();
    let objective = |w: &[f64]| -> f64 {
        let mut v = 0.0;
        for i in 0..n {
            let mut kw = 0.0;
            for j in 0..n {
                kw += k_mat[[i, j]] * w[j];
            }
            v += 0.5 * w[i] * kw - k_vec[i] * w[i];
        }
        v
    };
    let points = 13usize;
    let mut low = vec![0.0; n];
    let mut high = vec![bound; n];
    let mut best = (vec![0.0; n], f64::INFINITY);
    for _ in 0..12 {
        let steps: Vec<f64> = (0..n).map(|i| (high[i] - low[i]) / (points - 1) as f64).collect();
        let mut idx = vec![0usize; n];
        let mut w = vec![0.0; n];
        'outer: loop {
            for i in 0..n {
                w[i] = low[i] + idx[i] as f64 * steps[i];
            }
            let s: f64 = w.iter().sum();
            if s >= lo - 1e-12 && s <= hi + 1e-12 {
                let v = objective(&w);
                if v < best.1 {
                    best = (w.clone(), v);
                }
            }
            for digit in idx.iter_mut() {
                *digit += 1;
                if *digit < points {
                    continue 'outer;
                }
                *digit = 0;
            }
            break;
        }
        for i in 0..n {
            let radius = 2.0 * steps[i];
            low[i] = (best.0[i] - radius).max(0.0);
            high[i] = (best.0[i] + radius).min(bound);
        }
    }
    best.1
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Random posterior rows with a random source prior.
pub fn random_posteriors(rng: &mut SeededRng) -> (Array2<f64>, ProbVector) {
    let k = 2 + rng.below(3);
    let m = 1 + rng.below(60);
    let sharp = rng.uniform_range(0.2, 4.0);
    let mut post = Array2::zeros((m, k));
    for mut row in post.rows_mut() {
        let logits: Vec<f64> = (0..k).map(|_| sharp * rng.normal()).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        for (c, z) in logits.iter().enumerate() {
            row[c] = (z - max).exp() / s;
        }
    }
    let raw: Vec<f64> = (0..k).map(|_| rng.uniform_range(0.1, 1.0)).collect();
    (post, ProbVector::normalized(raw).unwrap())
}

pub fn grid_argmax_two_class(post: &ArrayView2<f64>, prior: &ProbVector, step: f64) -> f64 {
    let n = (1.0 / step).round() as usize;
    (0..=n)
        .map(|i| i as f64 * step)
        .map(|t| {
            let theta = [1.0 - t, t];
            let ll: f64 = post
                .rows()
                .into_iter()
                .map(|r| (theta[0] * r[0] / prior[0] + theta[1] * r[1] / prior[1]).ln())
                .sum();
            (t, ll)
        })
        .fold(
            (0.0, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0
}

/// Γ(dof/2) from Γ(1/2) = √π and Γ(1) = 1 by recurrence.
pub fn gamma_half_integer(dof: usize) -> f64 {
    let mut g = if dof.is_multiple_of(2) { 1.0 } else { std::f64::consts::PI.sqrt() };
    let mut a = if dof.is_multiple_of(2) { 1.0 } else { 0.5 };
    while a < dof as f64 / 2.0 - 1e-9 {
        g *= a;
        a += 1.0;
    }
    g
}

/// `P[χ² > x]` as `1 − ∫₀ˣ f`, with `t = u²` to remove the singularity at 0
/// and composite Simpson on the result.
pub fn chi2_survival_by_quadrature(x: f64, dof: usize) -> f64 {
    let k = dof as f64 / 2.0;
    let norm = 2f64.powf(k) * gamma_half_integer(dof);
    // f(u²)·2u with f the density
    let g = |u: f64| -> f64 {
        if u == 0.0 {
            return if dof == 1 { 2.0 / norm } else { 0.0 };
        }
        2.0 * u.powf(2.0 * k - 1.0) * (-u * u / 2.0).exp() / norm
    };
    let b = x.sqrt();
    let n = 4000;
    let h = b / n as f64;
    let mut s = g(0.0) + g(b);
    for i in 1..n {
        s += g(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    1.0 - s * h / 3.0
}
