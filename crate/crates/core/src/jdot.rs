//! Joint-distribution optimal transport for regression under a feature
//! distortion between domains.
//!
//! Block-coordinate descent alternates between an OT plan on the joint
//! feature/label cost and a Ridge fit on plan-averaged ("fictive") labels.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::euclidean;
use crate::models::{fit_ridge, RidgeModel};
use crate::ot::{solve_exact, solve_sinkhorn, CostMatrix, SinkhornOptions, TransportPlan, MARGINAL_TOL};

/// Above this many plan cells `PlanSolver::Auto` switches to Sinkhorn.
pub const EXACT_CELL_LIMIT: usize = 250_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PlanSolver {
    #[default]
    Auto,
    Exact,
    /// `None` uses the Sinkhorn default strength.
    Entropic {
        epsilon: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JdotConfig {
    /// Weight of the feature distance; `None` means [`default_lambda`].
    pub lambda: Option<f64>,
    pub ridge_reg: f64,
    pub bcd_max_iter: usize,
    pub plan_solver: PlanSolver,
    /// Stop once a full iteration lowers the objective by less than this.
    pub objective_tol: f64,
}

impl Default for JdotConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            ridge_reg: 1e-2,
            bcd_max_iter: 20,
            plan_solver: PlanSolver::Auto,
            objective_tol: 1e-9,
        }
    }
}

impl JdotConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda must be > 0, got {l}")));
            }
        }
        if !(self.ridge_reg > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ridge regularization must be > 0, got {}",
                self.ridge_reg
            )));
        }
        if !(self.objective_tol >= 0.0) {
            return Err(Error::InvalidParameter("objective tolerance must be >= 0".into()));
        }
        if let PlanSolver::Entropic { epsilon: Some(e) } = self.plan_solver {
            if !(e > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "entropic strength must be > 0, got {e}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JdotResult {
    pub model: RidgeModel,
    /// `None` only when no BCD iteration ran.
    pub final_plan: Option<TransportPlan>,
    /// Joint objective after every half-step, plan-step first.
    pub objective_trace: Vec<f64>,
    pub fictive_labels: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

/// `Cᵢⱼ = λ‖xᵢ − x'ⱼ‖ + (yᵢ − h(x'ⱼ))²`.
pub fn joint_cost_matrix<H>(source: &LabeledDataset, target: &ArrayView2<f64>, h: H, lambda: f64) -> Result<CostMatrix>
where
    H: Fn(&ArrayView1<f64>) -> f64,
{
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda must be > 0, got {lambda}")));
    }
    let y = regression_targets(source)?;
    check_dims(source.dim(), target.ncols())?;
    let predictions: Vec<f64> = target.axis_iter(Axis(0)).map(|x| h(&x)).collect();
    let xs = source.features();
    let mut c = Array2::zeros((source.len(), target.nrows()));
    for (i, xi) in xs.axis_iter(Axis(0)).enumerate() {
        for (j, xj) in target.axis_iter(Axis(0)).enumerate() {
            c[[i, j]] = lambda * euclidean(&xi, &xj) + (y[i] - predictions[j]).powi(2);
        }
    }
    CostMatrix::new(c)
}

/// Inverse of the largest source/target Euclidean distance.
pub fn default_lambda(source: &ArrayView2<f64>, target: &ArrayView2<f64>) -> Result<f64> {
    if source.nrows() == 0 || target.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    check_dims(source.ncols(), target.ncols())?;
    let mut max = 0.0f64;
    for a in source.axis_iter(Axis(0)) {
        for b in target.axis_iter(Axis(0)) {
            max = max.max(euclidean(&a, &b));
        }
    }
    if max > 0.0 {
        Ok(1.0 / max)
    } else {
        Err(Error::ZeroDiameter)
    }
}

/// `ŷ'ⱼ = m_T Σᵢ γᵢⱼ yᵢ`; requires a uniform column marginal.
pub fn fictive_labels(plan: &TransportPlan, source_labels: &[f64]) -> Result<Vec<f64>> {
    let (rows, cols) = plan.dim();
    if source_labels.len() != rows {
        return Err(Error::DimensionMismatch {
            expected: rows,
            found: source_labels.len(),
        });
    }
    let uniform = 1.0 / cols as f64;
    if let Some(bad) = plan
        .col_marginal()
        .as_slice()
        .iter()
        .find(|&&b| (b - uniform).abs() > 1e-12)
    {
        return Err(Error::InvalidParameter(format!(
            "fictive labels need a uniform column marginal, found entry {bad}"
        )));
    }
    let gamma = plan.gamma();
    let y = ArrayView1::from(source_labels);
    Ok(gamma.axis_iter(Axis(1)).map(|col| cols as f64 * col.dot(&y)).collect())
}

/// `Σᵢⱼ γᵢⱼ [λ‖xᵢ − x'ⱼ‖ + (yᵢ − h(x'ⱼ))²] + ε‖w‖²`.
pub fn jdot_objective(
    source: &LabeledDataset,
    target: &ArrayView2<f64>,
    gamma: &ArrayView2<f64>,
    model: &RidgeModel,
    lambda: f64,
) -> Result<f64> {
    let costs = joint_cost_matrix(source, target, |x| model.predict_point(x), lambda)?;
    if gamma.dim() != costs.dim() {
        return Err(Error::DimensionMismatch {
            expected: costs.view().len(),
            found: gamma.len(),
        });
    }
    let transport: f64 = gamma.iter().zip(costs.view().iter()).map(|(g, c)| g * c).sum();
    Ok(transport + model.reg * model.weights.iter().map(|w| w * w).sum::<f64>())
}

fn regression_targets(data: &LabeledDataset) -> Result<&[f64]> {
    data.targets()
        .ok_or_else(|| Error::InvalidParameter("JDOT needs real-valued regression labels".into()))
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

fn solve_plan(costs: &CostMatrix, solver: PlanSolver) -> Result<TransportPlan> {
    let (r, s) = costs.dim();
    let a = Array1::from_elem(r, 1.0 / r as f64);
    let b = Array1::from_elem(s, 1.0 / s as f64);
    let entropic = match solver {
        PlanSolver::Exact => None,
        PlanSolver::Entropic { epsilon } => Some(epsilon),
        PlanSolver::Auto if r * s <= EXACT_CELL_LIMIT => None,
        PlanSolver::Auto => Some(None),
    };
    match entropic {
        None => solve_exact(&a.view(), &b.view(), costs),
        Some(epsilon) => {
            let out = solve_sinkhorn(
                &a.view(),
                &b.view(),
                costs,
                &SinkhornOptions {
                    epsilon,
                    ..Default::default()
                },
            )?;
            out.plan(MARGINAL_TOL)
        }
    }
}

/// Fits a target-domain Ridge model by alternating plan and predictor steps,
/// starting from Ridge on the source sample.
pub fn jdot_fit(source: &LabeledDataset, target: &ArrayView2<f64>, cfg: &JdotConfig) -> Result<JdotResult> {
    cfg.validate()?;
    let y = regression_targets(source)?;
    check_dims(source.dim(), target.ncols())?;
    if target.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let lambda = match cfg.lambda {
        Some(l) => l,
        None => default_lambda(&source.features(), target)?,
    };
    let yv = ArrayView1::from(y);
    let mut model = fit_ridge(&source.features(), &yv, &source.weights().view(), cfg.ridge_reg)?;
    let mut trace = Vec::new();
    let mut plan = None;
    let mut fictive = y.to_vec();
    let unit = Array1::ones(target.nrows());
    let mut iterations = 0;
    let mut previous = f64::INFINITY;
    while iterations < cfg.bcd_max_iter {
        iterations += 1;
        let costs = joint_cost_matrix(source, target, |x| model.predict_point(x), lambda)?;
        let next_plan = solve_plan(&costs, cfg.plan_solver)?;
        trace.push(jdot_objective(source, target, &next_plan.gamma(), &model, lambda)?);

        fictive = fictive_labels(&next_plan, y)?;
        model = fit_ridge(target, &ArrayView1::from(&fictive), &unit.view(), cfg.ridge_reg)?;
        let current = jdot_objective(source, target, &next_plan.gamma(), &model, lambda)?;
        trace.push(current);
        plan = Some(next_plan);

        if (previous - current).abs() < cfg.objective_tol {
            break;
        }
        previous = current;
    }
    Ok(JdotResult {
        model,
        final_plan: plan,
        objective_trace: trace,
        fictive_labels: fictive,
        lambda,
        iterations,
    })
}
