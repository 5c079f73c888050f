//! Covariate shift: `p_S(x) ≠ p_T(x)` while `p(y|x)` is shared. Source rows
//! are reweighted by estimates of `p_T(x)/p_S(x)`, either through kernel mean
//! matching (a box- and budget-constrained QP) or a ratio of KDEs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Labels};
use crate::error::{Error, Result};
use crate::linalg::{column_moments, gershgorin_bound, power_iteration};
use crate::models::KernelSpec;

/// Default box bound on KMM weights.
pub const DEFAULT_BOX_BOUND: f64 = 1000.0;
/// Upper clamp applied to KDE ratio weights.
pub const KDE_CLAMP: f64 = 1e4;

fn check_samples(source: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<()> {
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    if source.ncols() != target.ncols() {
        return Err(Error::DimensionMismatch {
            expected: source.ncols(),
            found: target.ncols(),
        });
    }
    Ok(())
}

/// Squared MMD between the `weights`-reweighted source sample and the target
/// sample, all three terms included. Values within round-off of zero are
/// clamped to zero.
pub fn mmd_squared(
    source: &ArrayView2<f64>,
    weights: &ArrayView1<f64>,
    target: &ArrayView2<f64>,
    kernel: &KernelSpec,
) -> Result<f64> {
    check_samples(source, target)?;
    if weights.len() != source.nrows() {
        return Err(Error::DimensionMismatch {
            expected: source.nrows(),
            found: weights.len(),
        });
    }
    let ms = source.nrows() as f64;
    let mt = target.nrows() as f64;
    let kss = kernel.gram(source, source)?;
    let kst = kernel.gram(source, target)?;
    let ktt = kernel.gram(target, target)?;
    let quad = weights.dot(&kss.dot(weights)) / (ms * ms);
    let cross = weights.dot(&kst.sum_axis(Axis(1))) / (ms * mt);
    let tt = ktt.sum() / (mt * mt);
    let v = quad - 2.0 * cross + tt;
    Ok(v.max(0.0))
}

/// `min ½ wᵀKw − kᵀw` s.t. `0 ≤ wᵢ ≤ B` and `|mean(w) − 1| ≤ ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub k_mat: Array2<f64>,
    pub k_vec: Array1<f64>,
    pub bound: f64,
    pub budget: f64,
}

impl QuadraticProgram {
    pub fn new(k_mat: Array2<f64>, k_vec: Array1<f64>, bound: f64, budget: f64) -> Result<Self> {
        let n = k_vec.len();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if k_mat.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: k_mat.len(),
            });
        }
        if k_mat.iter().chain(k_vec.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("quadratic program".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if (k_mat[[i, j]] - k_mat[[j, i]]).abs() > 1e-9 {
                    return Err(Error::InvalidParameter("K must be symmetric".into()));
                }
            }
        }
        if !(bound > 0.0) {
            return Err(Error::InvalidParameter(format!("box bound must be > 0, got {bound}")));
        }
        if !(budget >= 0.0) {
            return Err(Error::InvalidParameter(format!("budget must be >= 0, got {budget}")));
        }
        if bound < 1.0 - budget {
            return Err(Error::InvalidParameter("empty feasible set: bound < 1 − budget".into()));
        }
        Ok(Self {
            k_mat,
            k_vec,
            bound,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.k_vec.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_vec.is_empty()
    }

    pub fn objective(&self, w: &ArrayView1<f64>) -> f64 {
        0.5 * w.dot(&self.k_mat.dot(w)) - self.k_vec.dot(w)
    }

    /// Range `[lo, hi]` allowed for `Σ wᵢ`.
    pub fn sum_range(&self) -> (f64, f64) {
        let n = self.len() as f64;
        (n * (1.0 - self.budget), n * (1.0 + self.budget))
    }

    pub fn is_feasible(&self, w: &ArrayView1<f64>, tol: f64) -> bool {
        let (lo, hi) = self.sum_range();
        let s = w.sum();
        w.iter().all(|&v| v >= -tol && v <= self.bound + tol) && s >= lo - tol && s <= hi + tol
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, v: &ArrayView1<f64>) -> Array1<f64> {
        let (lo, hi) = self.sum_range();
        project_box_budget(v, self.bound, lo, hi)
    }
}

/// Projection of `v` onto `{0 ≤ w ≤ bound, lo ≤ Σw ≤ hi}`.
///
/// The minimizer is `clip(v − τ, 0, bound)` for the multiplier `τ` that puts
/// the sum on the violated side of the band (τ = 0 when the clipped sum
/// already lies inside it); `τ` is found by bisection.
pub fn project_box_budget(v: &ArrayView1<f64>, bound: f64, lo: f64, hi: f64) -> Array1<f64> {
    let clipped_sum = |tau: f64| v.iter().map(|x| (x - tau).clamp(0.0, bound)).sum::<f64>();
    let s0 = clipped_sum(0.0);
    let target = if s0 > hi {
        hi
    } else if s0 < lo {
        lo
    } else {
        return v.mapv(|x| x.clamp(0.0, bound));
    };
    let vmax = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let vmin = v.iter().copied().fold(f64::INFINITY, f64::min);
    // the clipped sum is nonincreasing in τ: n·bound at τ = vmin − bound, 0 at τ = vmax
    let (mut a, mut b) = (vmin - bound, vmax);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if clipped_sum(mid) > target {
            a = mid;
        } else {
            b = mid;
        }
    }
    // Within the final bracket the sum is affine in τ; solve it exactly.
    let tau = {
        let (sa, sb) = (clipped_sum(a), clipped_sum(b));
        if sa != sb {
            (a + (sa - target) / (sa - sb) * (b - a)).clamp(a, b)
        } else {
            0.5 * (a + b)
        }
    };
    v.mapv(|x| (x - tau).clamp(0.0, bound))
}

/// Assembles `K_ij = 2 k(xᵢ, xⱼ)` and `kᵢ = (2 m_S / m_T) Σⱼ k(xᵢ, x'ⱼ)`.
///
/// `budget = None` selects `(√m_S − 1)/√m_S`.
pub fn build_kmm_qp(
    source: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    kernel: &KernelSpec,
    bound: f64,
    budget: Option<f64>,
) -> Result<QuadraticProgram> {
    check_samples(source, target)?;
    if !(bound > 0.0) {
        return Err(Error::InvalidParameter(format!("box bound must be > 0, got {bound}")));
    }
    let ms = source.nrows() as f64;
    let mt = target.nrows() as f64;
    let budget = budget.unwrap_or_else(|| default_budget(source.nrows()));
    let k_mat = kernel.gram(source, source)? * 2.0;
    let k_vec = kernel.gram(source, target)?.sum_axis(Axis(1)) * (2.0 * ms / mt);
    QuadraticProgram::new(k_mat, k_vec, bound, budget)
}

/// `(√m − 1)/√m`.
pub fn default_budget(m: usize) -> f64 {
    let r = (m as f64).sqrt();
    (r - 1.0) / r
}

/// Nonnegative importance weights, one per source row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(pub Vec<f64>);

impl WeightVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn view(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.0[..])
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    pub max_iter: usize,
    /// Relative objective change below which iteration stops.
    pub tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: WeightVector,
    pub objective: f64,
    pub iterations: usize,
    /// False when `max_iter` ran out; `weights` is then the best feasible iterate.
    pub converged: bool,
    /// Objective of every accepted iterate, starting from the initial point.
    pub objective_trace: Vec<f64>,
}

/// Projected gradient with momentum, kept monotone: each iteration computes
/// the projected step from the extrapolated point and keeps it only if it
/// does not increase the objective.
///
/// The step is `1/L` with `L` a power-iteration estimate of `λ_max(K)`,
/// halved whenever the sufficient-decrease test fails.
pub fn solve_qp(qp: &QuadraticProgram, opts: &QpOptions) -> Result<QpSolution> {
    let n = qp.len();
    let lmax = power_iteration(&qp.k_mat.view(), 100)
        .max(1e-12)
        .min(gershgorin_bound(&qp.k_mat.view()).max(1e-12));
    let mut step = 1.0 / (1.05 * lmax);

    let mut x = qp.project(&Array1::ones(n).view());
    let mut fx = qp.objective(&x.view());
    let mut trace = vec![fx];
    let mut y = x.clone();
    let mut momentum = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let ky = qp.k_mat.dot(&y);
        let grad = &ky - &qp.k_vec;
        let fy = 0.5 * y.dot(&ky) - qp.k_vec.dot(&y);
        let z = loop {
            let z = qp.project(&(&y - &(&grad * step)).view());
            let d = &z - &y;
            let fz = qp.objective(&z.view());
            if fz <= fy + grad.dot(&d) + d.dot(&d) / (2.0 * step) + 1e-12 * fy.abs() {
                break (z, fz);
            }
            step *= 0.5;
        };
        let (z, fz) = z;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let prev = x.clone();
        let improved = fz <= fx;
        if improved {
            x = z.clone();
        }
        y = &x + &((&z - &x) * (momentum / next_momentum)) + &((&x - &prev) * ((momentum - 1.0) / next_momentum));
        momentum = next_momentum;
        if improved {
            let change = (fx - fz).abs() / fx.abs().max(1e-300);
            fx = fz;
            trace.push(fx);
            if change < opts.tol {
                converged = true;
                break;
            }
        } else {
            // restart momentum from the incumbent
            y = x.clone();
            momentum = 1.0;
        }
    }
    Ok(QpSolution {
        weights: WeightVector(x.to_vec()),
        objective: fx,
        iterations,
        converged,
        objective_trace: trace,
    })
}

/// Kernel mean matching: [`build_kmm_qp`] with the default budget, then [`solve_qp`].
pub fn kmm_weights(
    source: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    kernel: &KernelSpec,
    bound: f64,
) -> Result<QpSolution> {
    let qp = build_kmm_qp(source, target, kernel, bound, None)?;
    solve_qp(&qp, &QpOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BandwidthRule {
    /// `1.06 σ_j n^(−1/5)` per coordinate.
    #[default]
    Silverman,
}

/// Product-Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Kde {
    points: Array2<f64>,
    bandwidths: Vec<f64>,
}

impl Kde {
    pub fn fit(points: &ArrayView2<f64>, rule: BandwidthRule) -> Result<Self> {
        let n = points.nrows();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        let (_, std) = column_moments(points);
        let BandwidthRule::Silverman = rule;
        let factor = 1.06 * (n as f64).powf(-0.2);
        let bandwidths = std.iter().map(|&s| if s > 0.0 { factor * s } else { factor }).collect();
        Ok(Self {
            points: points.to_owned(),
            bandwidths,
        })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn density(&self, x: &ArrayView1<f64>) -> f64 {
        let norm: f64 = self
            .bandwidths
            .iter()
            .map(|h| h * (2.0 * std::f64::consts::PI).sqrt())
            .product();
        let mut acc = 0.0;
        for row in self.points.axis_iter(Axis(0)) {
            let mut e = 0.0;
            for (j, h) in self.bandwidths.iter().enumerate() {
                let u = (x[j] - row[j]) / h;
                e += u * u;
            }
            acc += (-0.5 * e).exp();
        }
        acc / (self.points.nrows() as f64 * norm)
    }
}

/// Density-ratio estimate `p̂_T(x)/p̂_S(x)` from two KDEs, clamped to `[0, clamp]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeRatio {
    pub source: Kde,
    pub target: Kde,
    pub clamp: f64,
}

impl KdeRatio {
    pub fn fit(source: &ArrayView2<f64>, target: &ArrayView2<f64>, rule: BandwidthRule) -> Result<Self> {
        check_samples(source, target)?;
        Ok(Self {
            source: Kde::fit(source, rule)?,
            target: Kde::fit(target, rule)?,
            clamp: KDE_CLAMP,
        })
    }

    /// Ratio at `x`. A source density that underflows to zero gives the clamp
    /// value when the target density is positive and an error otherwise.
    pub fn ratio_at(&self, x: &ArrayView1<f64>) -> Result<f64> {
        let ps = self.source.density(x);
        let pt = self.target.density(x);
        if ps > 0.0 {
            Ok((pt / ps).clamp(0.0, self.clamp))
        } else if pt > 0.0 {
            Ok(self.clamp)
        } else {
            Err(Error::ZeroSourceDensity(0))
        }
    }
}

/// KDE-ratio weights evaluated at every source row.
pub fn kde_ratio_weights(
    source: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    rule: BandwidthRule,
) -> Result<WeightVector> {
    let ratio = KdeRatio::fit(source, target, rule)?;
    let mut out = Vec::with_capacity(source.nrows());
    for (i, row) in source.axis_iter(Axis(0)).enumerate() {
        out.push(ratio.ratio_at(&row).map_err(|_| Error::ZeroSourceDensity(i))?);
    }
    Ok(WeightVector(out))
}

/// Label of one observation, as passed to a loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelValue {
    Class(usize),
    Target(f64),
}

/// `(1/m) Σ wᵢ ℓ(h(xᵢ), yᵢ)`.
pub fn weighted_empirical_risk<H, L>(
    predictor: H,
    data: &LabeledDataset,
    weights: &ArrayView1<f64>,
    loss: L,
) -> Result<f64>
where
    H: Fn(&ArrayView1<f64>) -> f64,
    L: Fn(f64, LabelValue) -> f64,
{
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    let features = data.features();
    let mut acc = 0.0;
    for (i, row) in features.axis_iter(Axis(0)).enumerate() {
        let label = match data.labels() {
            Labels::Classes { indices, .. } => LabelValue::Class(indices[i]),
            Labels::Targets(t) => LabelValue::Target(t[i]),
        };
        acc += weights[i] * loss(predictor(&row), label);
    }
    Ok(acc / data.len() as f64)
}

/// 0/1 loss on class predictions encoded as `f64`.
pub fn zero_one_loss(prediction: f64, label: LabelValue) -> f64 {
    match label {
        LabelValue::Class(c) => f64::from(prediction.round() as usize != c),
        LabelValue::Target(t) => f64::from(prediction != t),
    }
}

pub fn squared_loss(prediction: f64, label: LabelValue) -> f64 {
    let y = match label {
        LabelValue::Class(c) => c as f64,
        LabelValue::Target(t) => t,
    };
    (prediction - y).powi(2)
}

/// Population variance `E[w²] − E[w]²` of a weight sample; NaN when empty.
pub fn weight_variance(weights: &[f64]) -> f64 {
    let n = weights.len() as f64;
    let mean = weights.iter().sum::<f64>() / n;
    weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n
}
