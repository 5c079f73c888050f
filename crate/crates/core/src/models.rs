//! Learners used by the adaptation routines: a weighted multinomial softmax
//! classifier, weighted Ridge regression and the Gaussian kernel.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, ProbVector, Standardizer};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, cross_squared_distances, median, squared_distance};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxOptions {
    pub max_iter: usize,
    /// Stop once the Euclidean norm of the gradient drops below this.
    pub grad_tol: f64,
    /// Standardize features with statistics of the training sample.
    pub standardize: bool,
    /// Warm start, in the (possibly standardized) parameter space. Shape K×(p+1).
    pub init: Option<Array2<f64>>,
}

impl Default for SoftmaxOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            grad_tol: 1e-7,
            standardize: true,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Objective value before the first step and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Multinomial logistic model. Row `k` of `params` holds the class-`k`
/// coefficients followed by its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxClassifier {
    params: Array2<f64>,
    reg: f64,
    standardizer: Standardizer,
    class_prior: Option<ProbVector>,
    diagnostics: FitDiagnostics,
}

impl SoftmaxClassifier {
    /// Builds a classifier directly from its parameter matrix (no standardization).
    pub fn from_params(params: Array2<f64>, reg: f64) -> Result<Self> {
        if params.ncols() < 2 || params.nrows() < 1 {
            return Err(Error::InvalidParameter(
                "parameter matrix must be K x (p+1) with p >= 1".into(),
            ));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax parameters".into()));
        }
        let p = params.ncols() - 1;
        Ok(Self {
            params,
            reg,
            standardizer: Standardizer::identity(p),
            class_prior: None,
            diagnostics: FitDiagnostics::default(),
        })
    }

    /// Weighted class distribution of the training sample; `None` when some
    /// class carried no weight or the model was built from raw parameters.
    pub fn class_prior(&self) -> Option<&ProbVector> {
        self.class_prior.as_ref()
    }

    pub fn params(&self) -> ArrayView2<'_, f64> {
        self.params.view()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    pub fn classes(&self) -> usize {
        self.params.nrows()
    }

    pub fn dim(&self) -> usize {
        self.params.ncols() - 1
    }

    pub fn diagnostics(&self) -> &FitDiagnostics {
        &self.diagnostics
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    fn check_dim(&self, p: usize) -> Result<()> {
        if p != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: p,
            });
        }
        Ok(())
    }

    /// Class probabilities for one observation.
    pub fn predict_proba(&self, x: &ArrayView1<f64>) -> Result<ProbVector> {
        self.check_dim(x.len())?;
        let z = self.standardizer.transform_point(x);
        let mut out = vec![0.0; self.classes()];
        softmax_row(&self.params.view(), &z.view(), &mut out);
        ProbVector::normalized(out)
    }

    /// Class probabilities for every row of `x`, as an m×K matrix.
    pub fn predict_proba_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        let z = self.standardizer.transform(x);
        let k = self.classes();
        let mut out = Array2::zeros((x.nrows(), k));
        let mut buf = vec![0.0; k];
        for (i, row) in z.axis_iter(Axis(0)).enumerate() {
            softmax_row(&self.params.view(), &row, &mut buf);
            out.row_mut(i).assign(&ArrayView1::from(&buf[..]));
        }
        Ok(out)
    }

    /// Most probable class per row.
    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Vec<usize>> {
        let probs = self.predict_proba_batch(x)?;
        Ok(probs
            .axis_iter(Axis(0))
            .map(|r| crate::data::argmax(r.as_slice().expect("row-major")))
            .collect())
    }
}

/// Writes softmax(W [x; 1]) into `out`.
fn softmax_row(params: &ArrayView2<f64>, x: &ArrayView1<f64>, out: &mut [f64]) {
    let p = x.len();
    let mut max = f64::NEG_INFINITY;
    for (k, o) in out.iter_mut().enumerate() {
        let row = params.row(k);
        let mut z = row[p];
        for j in 0..p {
            z += row[j] * x[j];
        }
        *o = z;
        max = max.max(z);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Weighted mean log-loss plus `reg/2 ‖W‖²` (bias column unpenalized), and
/// its gradient with respect to `params`.
///
/// The data term is normalized by the total weight, so scaling every weight
/// by a constant leaves the minimizer unchanged.
pub fn softmax_objective(
    params: &ArrayView2<f64>,
    x: &ArrayView2<f64>,
    labels: &[usize],
    weights: &ArrayView1<f64>,
    reg: f64,
) -> (f64, Array2<f64>) {
    let (k, cols) = params.dim();
    let p = cols - 1;
    let total: f64 = weights.sum();
    let mut grad = Array2::<f64>::zeros((k, cols));
    let mut loss = 0.0;
    let mut probs = vec![0.0; k];
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        let y = labels[i];
        // log-sum-exp for the loss, probabilities for the gradient
        let mut max = f64::NEG_INFINITY;
        for (c, pc) in probs.iter_mut().enumerate() {
            let prow = params.row(c);
            let mut z = prow[p];
            for j in 0..p {
                z += prow[j] * row[j];
            }
            *pc = z;
            max = max.max(z);
        }
        let zy = probs[y];
        let mut sum = 0.0;
        for pc in probs.iter_mut() {
            *pc = (*pc - max).exp();
            sum += *pc;
        }
        loss += w * (max + sum.ln() - zy);
        let scale = w / total;
        for (c, &pc) in probs.iter().enumerate() {
            let r = pc / sum - if c == y { 1.0 } else { 0.0 };
            let mut g = grad.row_mut(c);
            for j in 0..p {
                g[j] += scale * r * row[j];
            }
            g[p] += scale * r;
        }
    }
    loss /= total;
    let coef = params.slice(s![.., ..p]);
    loss += 0.5 * reg * coef.iter().map(|v| v * v).sum::<f64>();
    let mut gcoef = grad.slice_mut(s![.., ..p]);
    gcoef.scaled_add(reg, &coef);
    (loss, grad)
}

/// Trains a softmax classifier with default options.
pub fn fit_softmax(data: &LabeledDataset, weights: &ArrayView1<f64>, reg: f64) -> Result<SoftmaxClassifier> {
    fit_softmax_with(data, weights, reg, &SoftmaxOptions::default())
}

/// Full-batch proximal gradient descent with backtracking on
/// [`softmax_objective`]; stops when the full gradient norm drops below
/// `opts.grad_tol` or after `opts.max_iter` steps.
pub fn fit_softmax_with(
    data: &LabeledDataset,
    weights: &ArrayView1<f64>,
    reg: f64,
    opts: &SoftmaxOptions,
) -> Result<SoftmaxClassifier> {
    let (labels, classes) = data
        .class_indices()
        .ok_or_else(|| Error::InvalidParameter("softmax needs class labels".into()))?;
    if classes < 2 {
        return Err(Error::DegenerateLabels("need at least two classes".into()));
    }
    if weights.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: weights.len(),
        });
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidParameter("weights must be finite and nonnegative".into()));
    }
    if !(reg >= 0.0) || !reg.is_finite() {
        return Err(Error::InvalidParameter(format!("regularization {reg} must be >= 0")));
    }
    let mut mass = vec![0.0; classes];
    for (i, &l) in labels.iter().enumerate() {
        mass[l] += weights[i];
    }
    match mass.iter().filter(|&&w| w > 0.0).count() {
        0 => return Err(Error::InvalidParameter("all weights are zero".into())),
        1 => return Err(Error::DegenerateLabels("a single class is present".into())),
        _ => {}
    }

    let standardizer = if opts.standardize {
        Standardizer::fit(&data.features())
    } else {
        Standardizer::identity(data.dim())
    };
    let x = standardizer.transform(&data.features());
    let p = data.dim();
    let mut params = match &opts.init {
        Some(init) => {
            if init.dim() != (classes, p + 1) {
                return Err(Error::DimensionMismatch {
                    expected: classes * (p + 1),
                    found: init.len(),
                });
            }
            init.clone()
        }
        None => Array2::zeros((classes, p + 1)),
    };

    // The L2 term is handled by its exact proximal map, so the backtracking
    // step only has to fit the curvature of the log-loss.
    let penalty = |w: &Array2<f64>| 0.5 * reg * w.slice(s![.., ..p]).iter().map(|v| v * v).sum::<f64>();
    let (mut f, mut g) = softmax_objective(&params.view(), &x.view(), labels, weights, 0.0);
    let mut trace = vec![f + penalty(&params)];
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    loop {
        let mut full = g.clone();
        full.slice_mut(s![.., ..p]).scaled_add(reg, &params.slice(s![.., ..p]));
        if full.iter().map(|v| v * v).sum::<f64>().sqrt() < opts.grad_tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        for _ in 0..80 {
            let mut candidate = &params - &(&g * step);
            candidate
                .slice_mut(s![.., ..p])
                .mapv_inplace(|v| v / (1.0 + step * reg));
            let diff = &candidate - &params;
            let (fc, gc) = softmax_objective(&candidate.view(), &x.view(), labels, weights, 0.0);
            let model = f + (&g * &diff).sum() + diff.iter().map(|v| v * v).sum::<f64>() / (2.0 * step);
            if fc <= model + 1e-15 * f.abs() {
                accepted = Some((candidate, fc, gc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((candidate, fc, gc)) => {
                let total = fc + penalty(&candidate);
                // stalled at machine precision
                if total > *trace.last().expect("nonempty") {
                    break;
                }
                params = candidate;
                f = fc;
                g = gc;
                trace.push(total);
                step *= 2.0;
            }
            None => break,
        }
    }
    let class_prior = if mass.iter().all(|&w| w > 0.0) {
        ProbVector::normalized(mass).ok()
    } else {
        None
    };
    Ok(SoftmaxClassifier {
        params,
        reg,
        standardizer,
        class_prior,
        diagnostics: FitDiagnostics {
            iterations,
            converged,
            objective_trace: trace,
        },
    })
}

/// Linear model `h(x) = w·x + b` fitted by weighted Ridge regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub reg: f64,
}

impl RidgeModel {
    pub fn predict_point(&self, x: &ArrayView1<f64>) -> f64 {
        self.intercept + self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.ncols(),
            });
        }
        Ok(x.axis_iter(Axis(0)).map(|r| self.predict_point(&r)).collect())
    }
}

/// Weighted Ridge objective `Σ rᵢ(yᵢ − w·xᵢ − b)² / Σ rᵢ + reg·‖w‖²`.
pub fn ridge_objective(
    weights: &[f64],
    intercept: f64,
    reg: f64,
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    row_weights: &ArrayView1<f64>,
) -> f64 {
    let total = row_weights.sum();
    let mut data = 0.0;
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let pred = intercept + weights.iter().zip(row.iter()).map(|(w, v)| w * v).sum::<f64>();
        data += row_weights[i] * (y[i] - pred).powi(2);
    }
    data / total + reg * weights.iter().map(|w| w * w).sum::<f64>()
}

/// Minimizes [`ridge_objective`] exactly through the weighted normal equations.
/// The intercept is unpenalized.
pub fn fit_ridge(
    x: &ArrayView2<f64>,
    y: &ArrayView1<f64>,
    row_weights: &ArrayView1<f64>,
    reg: f64,
) -> Result<RidgeModel> {
    if !(reg > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "ridge regularization must be > 0, got {reg}"
        )));
    }
    let (m, p) = x.dim();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    for len in [y.len(), row_weights.len()] {
        if len != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: len,
            });
        }
    }
    if row_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::InvalidParameter(
            "row weights must be finite and nonnegative".into(),
        ));
    }
    let total = row_weights.sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("row weights have no mass".into()));
    }
    let mut xbar = Array1::<f64>::zeros(p);
    let mut ybar = 0.0;
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        xbar.scaled_add(row_weights[i], &row);
        ybar += row_weights[i] * y[i];
    }
    xbar /= total;
    ybar /= total;

    let mut gram = Array2::<f64>::zeros((p, p));
    let mut rhs = Array1::<f64>::zeros(p);
    let mut centered = Array1::<f64>::zeros(p);
    for (i, row) in x.axis_iter(Axis(0)).enumerate() {
        let r = row_weights[i] / total;
        if r == 0.0 {
            continue;
        }
        centered.assign(&row);
        centered -= &xbar;
        let yc = y[i] - ybar;
        for a in 0..p {
            rhs[a] += r * centered[a] * yc;
            for b in a..p {
                gram[[a, b]] += r * centered[a] * centered[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[[a, b]] = gram[[b, a]];
        }
        gram[[a, a]] += reg;
    }
    let w = cholesky_solve(&gram.view(), &rhs.view())?;
    let intercept = ybar - w.dot(&xbar);
    Ok(RidgeModel {
        weights: w.to_vec(),
        intercept,
        reg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelKind {
    Gaussian,
}

/// Kernel choice and bandwidth σ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "kernel bandwidth must be > 0, got {bandwidth}"
            )));
        }
        Ok(Self {
            kind: KernelKind::Gaussian,
            bandwidth,
        })
    }

    /// Bandwidth set to the median pairwise distance of the pooled rows.
    ///
    /// At most the first 1000 rows of each sample enter the median.
    pub fn median_heuristic(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Self> {
        let take = |x: &ArrayView2<f64>| x.slice(s![..x.nrows().min(1000), ..]).to_owned();
        let pooled =
            ndarray::concatenate(Axis(0), &[take(a).view(), take(b).view()]).map_err(|_| Error::DimensionMismatch {
                expected: a.ncols(),
                found: b.ncols(),
            })?;
        let n = pooled.nrows();
        let mut d = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                d.push(squared_distance(&pooled.row(i), &pooled.row(j)).sqrt());
            }
        }
        if d.is_empty() {
            return Err(Error::EmptySample);
        }
        let med = median(&mut d);
        if med > 0.0 {
            Self::gaussian(med)
        } else {
            Self::gaussian(1.0)
        }
    }

    pub fn eval(&self, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> f64 {
        match self.kind {
            KernelKind::Gaussian => (-squared_distance(x, y) / (2.0 * self.bandwidth * self.bandwidth)).exp(),
        }
    }

    /// Kernel matrix between the rows of `a` and the rows of `b`.
    pub fn gram(&self, a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if a.ncols() != b.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.ncols(),
                found: b.ncols(),
            });
        }
        let two_s2 = 2.0 * self.bandwidth * self.bandwidth;
        Ok(cross_squared_distances(a, b).mapv(|d| (-d / two_s2).exp()))
    }
}

/// `exp(−‖x − x'‖² / (2σ²))`.
pub fn gaussian_kernel(x: &ArrayView1<f64>, y: &ArrayView1<f64>, sigma: f64) -> Result<f64> {
    let k = KernelSpec::gaussian(sigma)?;
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    Ok(k.eval(x, y))
}
