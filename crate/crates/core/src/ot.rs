//! Discrete optimal transport between weighted point clouds.

use std::collections::VecDeque;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{DiscreteMeasure, ProbVector};
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;

/// Tolerance for plan marginals returned by the exact solver.
pub const MARGINAL_TOL: f64 = 1e-8;

/// Nonnegative ground-cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn new(costs: Array2<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::EmptySample);
        }
        for v in costs.iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite("cost matrix".into()));
            }
            if *v < 0.0 {
                return Err(Error::InvalidParameter(format!("negative cost {v}")));
            }
        }
        Ok(Self(costs))
    }

    /// Pairwise `metric(aᵢ, bⱼ)^power` between the rows of `a` and `b`.
    pub fn from_points(a: &ArrayView2<f64>, b: &ArrayView2<f64>, metric: GroundMetric, power: f64) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                found: b.ncols(),
            });
        }
        let mut c = Array2::zeros((a.nrows(), b.nrows()));
        for (i, ra) in a.axis_iter(Axis(0)).enumerate() {
            for (j, rb) in b.axis_iter(Axis(0)).enumerate() {
                c[[i, j]] = metric.distance(&ra, &rb).powf(power);
            }
        }
        Self::new(c)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn dim(&self) -> (usize, usize) {
        self.0.dim()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean().unwrap_or(0.0)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GroundMetric {
    #[default]
    Euclidean,
    Manhattan,
    Chebyshev,
}

impl GroundMetric {
    pub fn distance(&self, a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
        let diffs = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs());
        match self {
            GroundMetric::Euclidean => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            GroundMetric::Manhattan => diffs.sum(),
            GroundMetric::Chebyshev => diffs.fold(0.0, f64::max),
        }
    }
}

/// Coupling `γ` with its prescribed marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    gamma: Array2<f64>,
    row_marginal: ProbVector,
    col_marginal: ProbVector,
}

impl TransportPlan {
    /// Validates that the row and column sums of `gamma` match the marginals
    /// within `tol`.
    pub fn new(gamma: Array2<f64>, row_marginal: ProbVector, col_marginal: ProbVector, tol: f64) -> Result<Self> {
        let plan = Self {
            gamma,
            row_marginal,
            col_marginal,
        };
        let (rows, cols) = plan.gamma.dim();
        if rows != plan.row_marginal.len() || cols != plan.col_marginal.len() {
            return Err(Error::DimensionMismatch {
                expected: plan.row_marginal.len() * plan.col_marginal.len(),
                found: plan.gamma.len(),
            });
        }
        if plan.gamma.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::Numerical("plan has negative or non-finite entries".into()));
        }
        let (rv, cv) = plan.max_marginal_error();
        if rv > tol || cv > tol {
            return Err(Error::Numerical(format!(
                "plan marginals off by {:e} (rows) / {:e} (columns)",
                rv, cv
            )));
        }
        Ok(plan)
    }

    pub fn gamma(&self) -> ArrayView2<'_, f64> {
        self.gamma.view()
    }

    pub fn row_marginal(&self) -> &ProbVector {
        &self.row_marginal
    }

    pub fn col_marginal(&self) -> &ProbVector {
        &self.col_marginal
    }

    pub fn dim(&self) -> (usize, usize) {
        self.gamma.dim()
    }

    /// Largest absolute deviation of row sums and of column sums.
    pub fn max_marginal_error(&self) -> (f64, f64) {
        let rows = self.gamma.sum_axis(Axis(1));
        let cols = self.gamma.sum_axis(Axis(0));
        let dev = |s: &Array1<f64>, m: &ProbVector| {
            s.iter()
                .zip(m.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        (dev(&rows, &self.row_marginal), dev(&cols, &self.col_marginal))
    }

    /// L1 deviations of row sums and of column sums.
    pub fn marginal_violation_l1(&self) -> (f64, f64) {
        let rows = self.gamma.sum_axis(Axis(1));
        let cols = self.gamma.sum_axis(Axis(0));
        let dev = |s: &Array1<f64>, m: &ProbVector| s.iter().zip(m.as_slice()).map(|(a, b)| (a - b).abs()).sum::<f64>();
        (dev(&rows, &self.row_marginal), dev(&cols, &self.col_marginal))
    }

    pub fn into_gamma(self) -> Array2<f64> {
        self.gamma
    }
}

/// Moves every support point through `map`; weights are kept and coincident
/// images are not merged.
pub fn push_forward<F>(measure: &DiscreteMeasure, map: F) -> Result<DiscreteMeasure>
where
    F: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    let support = measure.support();
    let mut rows = Vec::with_capacity(measure.len());
    for row in support.axis_iter(Axis(0)) {
        rows.push(map(&row));
    }
    let d = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let mut out = Array2::zeros((rows.len(), d));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    DiscreteMeasure::new(out, measure.weights().to_owned())
}

/// `Σᵢⱼ γᵢⱼ Cᵢⱼ`.
pub fn plan_cost(plan: &TransportPlan, costs: &CostMatrix) -> Result<f64> {
    plan_cost_raw(&plan.gamma(), &costs.view())
}

pub(crate) fn plan_cost_raw(gamma: &ArrayView2<f64>, costs: &ArrayView2<f64>) -> Result<f64> {
    if gamma.dim() != costs.dim() {
        return Err(Error::DimensionMismatch {
            expected: costs.len(),
            found: gamma.len(),
        });
    }
    Ok(gamma.iter().zip(costs.iter()).map(|(g, c)| g * c).sum())
}

fn marginals(a: &ArrayView1<f64>, b: &ArrayView1<f64>, costs: &CostMatrix) -> Result<(ProbVector, ProbVector)> {
    let (r, s) = costs.dim();
    if a.len() != r || b.len() != s {
        return Err(Error::DimensionMismatch {
            expected: r * s,
            found: a.len() * b.len(),
        });
    }
    let (sa, sb) = (a.sum(), b.sum());
    if (sa - sb).abs() > 1e-9 {
        return Err(Error::InfeasibleMarginals(sa, sb));
    }
    let pa = ProbVector::with_tolerance(a.to_vec(), 1e-9)?;
    let pb = ProbVector::with_tolerance(b.to_vec(), 1e-9)?;
    Ok((pa, pb))
}

/// Exact optimal plan by the network simplex method on the bipartite
/// transportation graph.
///
/// The basis is a spanning tree of `r + s − 1` cells started from the
/// north-west corner rule; entering cells are priced in cyclic blocks of
/// about `√(rs)` cells and the most negative reduced cost of the first block
/// containing one enters. Ties in the leaving cell go to the first cell met
/// walking the cycle from the entering column, which makes the returned plan
/// deterministic.
pub fn solve_exact(a: &ArrayView1<f64>, b: &ArrayView1<f64>, costs: &CostMatrix) -> Result<TransportPlan> {
    let (pa, pb) = marginals(a, b, costs)?;
    let gamma = NetworkSimplex::new(pa.as_slice(), pb.as_slice(), &costs.view()).solve()?;
    TransportPlan::new(gamma, pa, pb, MARGINAL_TOL)
}

struct NetworkSimplex<'a> {
    rows: usize,
    cols: usize,
    costs: &'a ArrayView2<'a, f64>,
    flow: Array2<f64>,
    basic: Array2<bool>,
    /// Basic cells touching each node; nodes `0..rows` are rows, the rest columns.
    adjacency: Vec<Vec<usize>>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

impl<'a> NetworkSimplex<'a> {
    fn new(a: &[f64], b: &[f64], costs: &'a ArrayView2<'a, f64>) -> Self {
        let (rows, cols) = (a.len(), b.len());
        let mut ns = Self {
            rows,
            cols,
            costs,
            flow: Array2::zeros((rows, cols)),
            basic: Array2::from_elem((rows, cols), false),
            adjacency: vec![Vec::new(); rows + cols],
            row_potential: vec![0.0; rows],
            col_potential: vec![0.0; cols],
        };
        ns.north_west_corner(a, b);
        ns
    }

    fn cell(&self, i: usize, j: usize) -> usize {
        i * self.cols + j
    }

    fn add_basic(&mut self, i: usize, j: usize, flow: f64) {
        self.basic[[i, j]] = true;
        self.flow[[i, j]] = flow;
        let c = self.cell(i, j);
        self.adjacency[i].push(c);
        self.adjacency[self.rows + j].push(c);
    }

    fn remove_basic(&mut self, i: usize, j: usize) {
        self.basic[[i, j]] = false;
        self.flow[[i, j]] = 0.0;
        let c = self.cell(i, j);
        let rows = self.rows;
        self.adjacency[i].retain(|&x| x != c);
        self.adjacency[rows + j].retain(|&x| x != c);
    }

    fn north_west_corner(&mut self, a: &[f64], b: &[f64]) {
        let tie = 1e-14;
        let (mut i, mut j) = (0, 0);
        let mut supply = a[0];
        let mut demand = b[0];
        loop {
            let q = supply.min(demand).max(0.0);
            self.add_basic(i, j, q);
            supply -= q;
            demand -= q;
            if i == self.rows - 1 && j == self.cols - 1 {
                break;
            }
            // on a tie only the row advances; the next cell carries a zero flow
            if (supply <= tie && i < self.rows - 1) || j == self.cols - 1 {
                i += 1;
                supply = a[i];
            } else {
                j += 1;
                demand = b[j];
            }
        }
    }

    /// Potentials with `u₀ = 0` and `uᵢ + vⱼ = Cᵢⱼ` on the basis.
    fn update_potentials(&mut self) {
        let n = self.rows + self.cols;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        self.row_potential[0] = 0.0;
        seen[0] = true;
        queue.push_back(0);
        while let Some(node) = queue.pop_front() {
            for &c in &self.adjacency[node] {
                let (i, j) = (c / self.cols, c % self.cols);
                let cost = self.costs[[i, j]];
                if node < self.rows {
                    let other = self.rows + j;
                    if !seen[other] {
                        seen[other] = true;
                        self.col_potential[j] = cost - self.row_potential[i];
                        queue.push_back(other);
                    }
                } else if !seen[i] {
                    seen[i] = true;
                    self.row_potential[i] = cost - self.col_potential[j];
                    queue.push_back(i);
                }
            }
        }
    }

    /// Tree path from row node `i` to column node `rows + j`, as cells.
    fn tree_path(&self, i: usize, j: usize) -> Vec<usize> {
        let n = self.rows + self.cols;
        let target = self.rows + j;
        let mut via = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut queue = VecDeque::new();
        seen[i] = true;
        queue.push_back(i);
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            for &c in &self.adjacency[node] {
                let (ci, cj) = (c / self.cols, c % self.cols);
                let other = if node < self.rows { self.rows + cj } else { ci };
                if !seen[other] {
                    seen[other] = true;
                    via[other] = c;
                    queue.push_back(other);
                }
            }
        }
        // walk back from the column node to the row node
        let mut path = Vec::new();
        let mut node = target;
        while node != i {
            let c = via[node];
            path.push(c);
            let (ci, cj) = (c / self.cols, c % self.cols);
            node = if node < self.rows { self.rows + cj } else { ci };
        }
        path
    }

    fn solve(mut self) -> Result<Array2<f64>> {
        let (r, s) = (self.rows, self.cols);
        if r == 1 || s == 1 {
            // the north-west corner plan is the only feasible one
            return Ok(self.flow);
        }
        let total = r * s;
        let block = ((total as f64).sqrt().ceil() as usize).max(16).min(total);
        let scale = self.costs.iter().fold(0.0f64, |m, &c| m.max(c.abs())).max(1e-300);
        let eps = 1e-12 * scale;
        let max_pivots = 50 * total + 100_000;
        let mut cursor = 0usize;
        self.update_potentials();
        for _ in 0..max_pivots {
            // block pricing
            let mut best: Option<(usize, f64)> = None;
            let mut scanned = 0;
            while scanned < total {
                let end = (scanned + block).min(total);
                while scanned < end {
                    let c = cursor;
                    cursor = if cursor + 1 == total { 0 } else { cursor + 1 };
                    scanned += 1;
                    let (i, j) = (c / s, c % s);
                    if self.basic[[i, j]] {
                        continue;
                    }
                    let rc = self.costs[[i, j]] - self.row_potential[i] - self.col_potential[j];
                    if rc < -eps && best.is_none_or(|(_, b)| rc < b) {
                        best = Some((c, rc));
                    }
                }
                if best.is_some() {
                    break;
                }
            }
            let Some((entering, _)) = best else {
                return Ok(self.flow);
            };
            let (ei, ej) = (entering / s, entering % s);
            // path cells alternate −, +, −, … starting next to the entering column
            let path = self.tree_path(ei, ej);
            let mut theta = f64::INFINITY;
            let mut leaving = usize::MAX;
            for (k, &c) in path.iter().enumerate() {
                if k % 2 == 0 {
                    let f = self.flow[[c / s, c % s]];
                    if f < theta {
                        theta = f;
                        leaving = c;
                    }
                }
            }
            let theta = theta.max(0.0);
            for (k, &c) in path.iter().enumerate() {
                let cell = &mut self.flow[[c / s, c % s]];
                if k % 2 == 0 {
                    *cell = (*cell - theta).max(0.0);
                } else {
                    *cell += theta;
                }
            }
            self.remove_basic(leaving / s, leaving % s);
            self.add_basic(ei, ej, theta);
            self.update_potentials();
        }
        Err(Error::Numerical("network simplex exceeded its pivot budget".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOptions {
    /// Entropic strength; `None` selects `0.05·mean(C)`.
    pub epsilon: Option<f64>,
    pub max_iter: usize,
    /// L1 row-marginal violation at which iteration stops.
    pub tol: f64,
}

impl Default for SinkhornOptions {
    fn default() -> Self {
        Self {
            epsilon: None,
            max_iter: 10_000,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornOutput {
    pub gamma: Array2<f64>,
    pub row_marginal: ProbVector,
    pub col_marginal: ProbVector,
    pub epsilon: f64,
    pub iterations: usize,
    /// L1 violation of the row and column marginals at exit.
    pub violation: (f64, f64),
    /// False when `max_iter` was reached with a violation above `tol`.
    pub converged: bool,
}

impl SinkhornOutput {
    /// Validated plan; fails if the marginals are off by more than `tol`.
    pub fn plan(&self, tol: f64) -> Result<TransportPlan> {
        TransportPlan::new(
            self.gamma.clone(),
            self.row_marginal.clone(),
            self.col_marginal.clone(),
            tol,
        )
    }
}

/// Iteration cap for each warm-up stage of the ε schedule.
const WARM_STAGE_ITERS: usize = 500;
/// Plain iterations used to estimate the linear rate before relaxing.
const RATE_PROBE: usize = 100;
const MAX_RELAXATION: f64 = 1.95;
/// Scaling iterations in the final stage before switching to Newton steps.
const NEWTON_SWITCH: usize = 1000;
/// Largest `r + s` for which the dense Newton system is formed.
const NEWTON_MAX_NODES: usize = 600;

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic OT by alternating log-domain scaling of `exp(−C/ε)`.
///
/// When ε is small compared with the cost range the potentials are warmed up
/// along a geometric schedule of larger ε values; all iterations count
/// against `max_iter`.
pub fn solve_sinkhorn(
    a: &ArrayView1<f64>,
    b: &ArrayView1<f64>,
    costs: &CostMatrix,
    opts: &SinkhornOptions,
) -> Result<SinkhornOutput> {
    let (pa, pb) = marginals(a, b, costs)?;
    let c = costs.view();
    let (r, s) = c.dim();
    let eps = opts.epsilon.unwrap_or(0.05 * costs.mean());
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "entropic strength must be > 0, got {eps}"
        )));
    }
    let log_a: Vec<f64> = pa.as_slice().iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = pb.as_slice().iter().map(|v| v.ln()).collect();
    let mut f = vec![0.0; r];
    let mut g = vec![0.0; s];

    let cmax = c.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut schedule = Vec::new();
    let mut level = eps;
    while level < cmax {
        schedule.push(level);
        level *= 4.0;
    }
    schedule.reverse();
    if schedule.is_empty() {
        schedule.push(eps);
    }

    let gamma_of =
        |f: &[f64], g: &[f64], e: f64| Array2::from_shape_fn((r, s), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / e).exp());
    let row_violation = |f: &[f64], g: &[f64], e: f64| {
        (0..r)
            .map(|i| {
                let row = log_sum_exp((0..s).map(|j| (f[i] + g[j] - c[[i, j]]) / e));
                (row.exp() - pa[i]).abs()
            })
            .sum::<f64>()
    };

    let col_violation = |f: &[f64], g: &[f64], e: f64| {
        (0..s)
            .map(|j| {
                let col = log_sum_exp((0..r).map(|i| (f[i] + g[j] - c[[i, j]]) / e));
                (col.exp() - pb[j]).abs()
            })
            .sum::<f64>()
    };
    let relax = |old: f64, new: f64, w: f64| {
        if old.is_finite() && new.is_finite() {
            old + w * (new - old)
        } else {
            new
        }
    };

    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let last = schedule.len() - 1;
    for (stage, &e) in schedule.iter().enumerate() {
        let is_final = stage == last;
        let stage_tol = if is_final { opts.tol } else { opts.tol.max(1e-5) };
        let stage_cap = if is_final {
            opts.max_iter
        } else {
            iterations + WARM_STAGE_ITERS
        };
        let mut omega = 1.0;
        let mut history: Vec<f64> = Vec::new();
        let mut best = f64::INFINITY;
        let stage_start = iterations;
        let newton_ok = is_final && r + s <= NEWTON_MAX_NODES && log_a.iter().chain(&log_b).all(|v| v.is_finite());
        loop {
            if iterations >= opts.max_iter.min(stage_cap) {
                break;
            }
            if newton_ok && iterations - stage_start >= NEWTON_SWITCH {
                // slow linear phase: finish on the same dual with Newton steps
                let budget = opts.max_iter - iterations;
                let (used, v) = newton_polish(&c, pa.as_slice(), pb.as_slice(), e, &mut f, &mut g, stage_tol, budget);
                iterations += used;
                violation = v;
                omega = 1.0;
                break;
            }
            iterations += 1;
            for i in 0..r {
                let next = if log_a[i].is_finite() {
                    e * log_a[i] - e * log_sum_exp((0..s).map(|j| (g[j] - c[[i, j]]) / e))
                } else {
                    f64::NEG_INFINITY
                };
                f[i] = relax(f[i], next, omega);
            }
            for j in 0..s {
                let next = if log_b[j].is_finite() {
                    e * log_b[j] - e * log_sum_exp((0..r).map(|i| (f[i] - c[[i, j]]) / e))
                } else {
                    f64::NEG_INFINITY
                };
                g[j] = relax(g[j], next, omega);
            }
            // columns are exact after a plain g-update; rows carry the error
            violation = row_violation(&f, &g, e);
            if omega != 1.0 {
                violation += col_violation(&f, &g, e);
            }
            if violation < stage_tol {
                break;
            }
            if !is_final {
                continue;
            }
            // over-relaxation tuned from the observed linear rate
            best = best.min(violation);
            if omega != 1.0 && !(violation <= 1e3 * best) {
                omega = 1.0;
                best = violation;
                history.clear();
                continue;
            }
            history.push(violation);
            if history.len() == RATE_PROBE {
                let rate = (violation / history[0]).powf(1.0 / (RATE_PROBE - 1) as f64);
                if rate.is_finite() && rate < 1.0 {
                    // invert the relaxed rate to the plain one, then take the optimal factor
                    let plain = ((rate + omega - 1.0).powi(2) / (rate * omega * omega)).min(1.0);
                    let tuned = 2.0 / (1.0 + (1.0 - plain).sqrt());
                    omega = tuned.clamp(omega, MAX_RELAXATION);
                } else {
                    omega = 1.0 + 0.5 * (omega - 1.0);
                }
                history.clear();
            }
        }
        if omega != 1.0 && violation >= stage_tol {
            // leave the column marginals exact
            for j in 0..s {
                if log_b[j].is_finite() {
                    g[j] = e * log_b[j] - e * log_sum_exp((0..r).map(|i| (f[i] - c[[i, j]]) / e));
                }
            }
            violation = row_violation(&f, &g, e);
        }
    }
    let gamma = gamma_of(&f, &g, eps);
    let col_violation: f64 = gamma
        .sum_axis(Axis(0))
        .iter()
        .zip(pb.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum();
    let row_violation: f64 = gamma
        .sum_axis(Axis(1))
        .iter()
        .zip(pa.as_slice())
        .map(|(x, y)| (x - y).abs())
        .sum();
    let converged = violation < opts.tol && row_violation.max(col_violation) < opts.tol.max(1e-12);
    Ok(SinkhornOutput {
        gamma,
        row_marginal: pa,
        col_marginal: pb,
        epsilon: eps,
        iterations,
        violation: (row_violation, col_violation),
        converged,
    })
}

/// Damped Newton ascent on the entropic dual
/// `⟨f, a⟩ + ⟨g, b⟩ − ε Σ exp((fᵢ + gⱼ − Cᵢⱼ)/ε)` with the last `g` pinned.
/// Returns the steps taken and the final L1 marginal violation.
#[allow(clippy::too_many_arguments)]
fn newton_polish(
    c: &ArrayView2<f64>,
    a: &[f64],
    b: &[f64],
    eps: f64,
    f: &mut [f64],
    g: &mut [f64],
    tol: f64,
    budget: usize,
) -> (usize, f64) {
    let (r, s) = c.dim();
    let n = r + s - 1;
    let plan = |f: &[f64], g: &[f64]| Array2::from_shape_fn((r, s), |(i, j)| ((f[i] + g[j] - c[[i, j]]) / eps).exp());
    let dual = |f: &[f64], g: &[f64], p: &Array2<f64>| {
        let lin: f64 =
            f.iter().zip(a).map(|(x, w)| x * w).sum::<f64>() + g.iter().zip(b).map(|(x, w)| x * w).sum::<f64>();
        lin - eps * p.sum()
    };
    let mut p = plan(f, g);
    let mut value = dual(f, g, &p);
    let mut used = 0;
    loop {
        let rows = p.sum_axis(Axis(1));
        let cols = p.sum_axis(Axis(0));
        let mut grad = Array1::zeros(n);
        for i in 0..r {
            grad[i] = a[i] - rows[i];
        }
        for j in 0..s - 1 {
            grad[r + j] = b[j] - cols[j];
        }
        let violation =
            (0..r).map(|i| (a[i] - rows[i]).abs()).sum::<f64>() + (0..s).map(|j| (b[j] - cols[j]).abs()).sum::<f64>();
        if violation < tol || used >= budget {
            return (used, violation);
        }
        used += 1;
        let mut hess = Array2::zeros((n, n));
        for i in 0..r {
            hess[[i, i]] = rows[i] / eps;
            for j in 0..s - 1 {
                hess[[i, r + j]] = p[[i, j]] / eps;
                hess[[r + j, i]] = p[[i, j]] / eps;
            }
        }
        for j in 0..s - 1 {
            hess[[r + j, r + j]] = cols[j] / eps;
        }
        let scale = hess.diag().iter().fold(0.0f64, |m, &v| m.max(v));
        let mut damping = 1e-12 * scale;
        let step = loop {
            let mut damped = hess.clone();
            damped.diag_mut().mapv_inplace(|v| v + damping);
            match cholesky_solve(&damped.view(), &grad.view()) {
                Ok(d) => break Some(d),
                Err(_) if damping < scale => damping = (damping * 100.0).max(1e-300),
                Err(_) => break None,
            }
        };
        let Some(step) = step else {
            return (used, violation);
        };
        let slope = step.dot(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let nf: Vec<f64> = (0..r).map(|i| f[i] + t * step[i]).collect();
            let mut ng: Vec<f64> = (0..s - 1).map(|j| g[j] + t * step[r + j]).collect();
            ng.push(g[s - 1]);
            let np = plan(&nf, &ng);
            let nv = dual(&nf, &ng, &np);
            if nv.is_finite() && nv >= value + 1e-4 * t * slope {
                f.copy_from_slice(&nf);
                g.copy_from_slice(&ng);
                p = np;
                value = nv;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return (used, violation);
        }
    }
}

/// `W_p(μ, ν) = (min_γ Σ γᵢⱼ d(zᵢ, z'ⱼ)^p)^(1/p)`, solved exactly.
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure, metric: GroundMetric, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("order p must be >= 1, got {p}")));
    }
    let costs = CostMatrix::from_points(&mu.support(), &nu.support(), metric, p)?;
    let plan = solve_exact(&mu.weights(), &nu.weights(), &costs)?;
    let cost = plan_cost(&plan, &costs)?.max(0.0);
    Ok(cost.powf(1.0 / p))
}
