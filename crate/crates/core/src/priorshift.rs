//! Prior shift: the class-conditional densities are shared between domains
//! but the class priors differ. Target priors are re-estimated by EM on the
//! source classifier's posteriors, and a likelihood-ratio statistic tells
//! whether the correction is worth applying.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::data::{LabeledDataset, ProbVector};
use crate::error::{Error, Result};
use crate::models::SoftmaxClassifier;

/// Posterior clamp applied before any log-ratio is taken.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PriorShiftOptions {
    /// Stop once the L∞ change of the prior estimate falls below this.
    pub tol: f64,
    pub max_iter: usize,
    /// Significance level of the likelihood-ratio test.
    pub alpha: f64,
}

impl Default for PriorShiftOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 1000,
            alpha: 0.05,
        }
    }
}

/// Output of [`em_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmRun {
    /// θ⁽⁰⁾ (the source prior), θ⁽¹⁾, … up to the returned estimate.
    pub prior_trajectory: Vec<ProbVector>,
    pub final_priors: ProbVector,
    /// Corrected posteriors of the last E-step; their column mean is `final_priors`.
    pub target_posteriors: Array2<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

/// EM estimate plus the likelihood-ratio test.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorShiftResult {
    pub em: EmRun,
    /// Log-likelihood ratio of corrected target vs. source model.
    pub test_statistic: f64,
    /// `2·|test_statistic|`, the value referred to χ²(K−1).
    pub chi2_variate: f64,
    pub p_value: f64,
    /// `p_value <= alpha`. When false the corrected quantities are still
    /// returned; the caller decides whether to use them.
    pub significant: bool,
}

impl PriorShiftResult {
    pub fn final_priors(&self) -> &ProbVector {
        &self.em.final_priors
    }

    pub fn target_posteriors(&self) -> ArrayView2<'_, f64> {
        self.em.target_posteriors.view()
    }

    /// Arg-max decisions under the corrected posteriors.
    pub fn adjusted_predictions(&self) -> Vec<usize> {
        self.em
            .target_posteriors
            .axis_iter(Axis(0))
            .map(|r| crate::data::argmax(r.as_slice().expect("row-major")))
            .collect()
    }
}

/// Class proportions `m_k / m` of a labeled sample.
pub fn source_priors(data: &LabeledDataset, classes: usize) -> Result<ProbVector> {
    let (labels, _) = data
        .class_indices()
        .ok_or_else(|| Error::InvalidParameter("source priors need class labels".into()))?;
    let mut counts = vec![0usize; classes];
    for &l in labels {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        counts[l] += 1;
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::ZeroSourcePrior(k));
    }
    let m = labels.len() as f64;
    ProbVector::normalized(counts.into_iter().map(|c| c as f64 / m).collect())
}

fn check_prior(prior: &ProbVector) -> Result<()> {
    match prior.as_slice().iter().position(|&p| p <= 0.0) {
        Some(k) => Err(Error::ZeroSourcePrior(k)),
        None => Ok(()),
    }
}

/// Writes the corrected posterior of one row into `out` and returns the
/// normalizer `Σ_k (θ_k/π_k)·p_k`.
fn correct_row(
    source_post: &ArrayView1<f64>,
    source_prior: &[f64],
    target_prior: &[f64],
    out: &mut [f64],
) -> Result<f64> {
    let mut z = 0.0;
    for k in 0..out.len() {
        let v = target_prior[k] / source_prior[k] * source_post[k];
        out[k] = v;
        z += v;
    }
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::VanishingPosteriorMass);
    }
    for v in out.iter_mut() {
        *v /= z;
    }
    Ok(z)
}

fn check_shapes(k: usize, priors: &[&ProbVector]) -> Result<()> {
    for p in priors {
        if p.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                found: p.len(),
            });
        }
    }
    Ok(())
}

/// Reweights a source posterior by the prior ratio `θ_k / π_k` and renormalizes.
pub fn corrected_posterior(
    source_post: &ProbVector,
    source_prior: &ProbVector,
    target_prior: &ProbVector,
) -> Result<ProbVector> {
    check_shapes(source_post.len(), &[source_prior, target_prior])?;
    check_prior(source_prior)?;
    let mut out = vec![0.0; source_post.len()];
    correct_row(
        &ArrayView1::from(source_post.as_slice()),
        source_prior.as_slice(),
        target_prior.as_slice(),
        &mut out,
    )?;
    ProbVector::normalized(out)
}

/// Clamps posteriors into `[1e-12, 1 − 1e-12]` and renormalizes each row.
pub fn smooth_posteriors(posteriors: &ArrayView2<f64>) -> Array2<f64> {
    let mut out = posteriors.mapv(|p| p.clamp(POSTERIOR_FLOOR, 1.0 - POSTERIOR_FLOOR));
    for mut row in out.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    out
}

/// One EM iteration: correct every row with `current_prior`, then take the
/// column mean of the corrected posteriors as the new prior.
pub fn em_step(
    source_posteriors: &ArrayView2<f64>,
    source_prior: &ProbVector,
    current_prior: &ProbVector,
) -> Result<(ProbVector, Array2<f64>)> {
    let (m, k) = source_posteriors.dim();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    check_shapes(k, &[source_prior, current_prior])?;
    check_prior(source_prior)?;
    let mut target = Array2::<f64>::zeros((m, k));
    let mut buf = vec![0.0; k];
    let mut sums = vec![0.0; k];
    for (i, row) in source_posteriors.axis_iter(Axis(0)).enumerate() {
        correct_row(&row, source_prior.as_slice(), current_prior.as_slice(), &mut buf)?;
        for c in 0..k {
            target[[i, c]] = buf[c];
            sums[c] += buf[c];
        }
    }
    let prior = ProbVector::normalized(sums.into_iter().map(|s| s / m as f64).collect())?;
    Ok((prior, target))
}

/// Iterates [`em_step`] from θ⁽⁰⁾ = `source_prior` until the L∞ change of
/// the prior is below `tol` or `max_iter` steps were taken.
///
/// With `max_iter == 0` no step is taken: the estimate is the source prior and
/// the posteriors are returned unchanged.
pub fn em_run(
    source_posteriors: &ArrayView2<f64>,
    source_prior: &ProbVector,
    tol: f64,
    max_iter: usize,
) -> Result<EmRun> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be > 0, got {tol}")));
    }
    if source_posteriors.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    check_shapes(source_posteriors.ncols(), &[source_prior])?;
    check_prior(source_prior)?;
    let mut trajectory = vec![source_prior.clone()];
    let mut current = source_prior.clone();
    let mut posteriors = source_posteriors.to_owned();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let (next, post) = em_step(source_posteriors, source_prior, &current)?;
        iterations += 1;
        let change = next
            .as_slice()
            .iter()
            .zip(current.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        trajectory.push(next.clone());
        current = next;
        posteriors = post;
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        prior_trajectory: trajectory,
        final_priors: current,
        target_posteriors: posteriors,
        iterations_used: iterations,
        converged,
    })
}

/// `Σᵢ log Σ_k θ_k p̂_S(ω_k|xᵢ)/π_k`: the target log-likelihood as a function
/// of the prior θ, up to a θ-independent constant. EM never decreases it.
pub fn surrogate_log_likelihood(
    source_posteriors: &ArrayView2<f64>,
    source_prior: &ProbVector,
    theta: &ProbVector,
) -> f64 {
    source_posteriors
        .axis_iter(Axis(0))
        .map(|row| {
            row.iter()
                .enumerate()
                .map(|(k, p)| theta[k] / source_prior[k] * p)
                .sum::<f64>()
                .ln()
        })
        .sum()
}

/// `Σᵢ log(p̂_S(ω_k|xᵢ)/p̂_T(ω_k|xᵢ)) + m·log(p̂_T(ω_k)/p̂_S(ω_k))` for class `k`.
pub fn likelihood_ratio_statistic(
    source_posteriors: &ArrayView2<f64>,
    target_posteriors: &ArrayView2<f64>,
    source_prior: &ProbVector,
    target_prior: &ProbVector,
    k: usize,
) -> Result<f64> {
    let (m, classes) = source_posteriors.dim();
    if target_posteriors.dim() != (m, classes) {
        return Err(Error::DimensionMismatch {
            expected: m * classes,
            found: target_posteriors.len(),
        });
    }
    check_shapes(classes, &[source_prior, target_prior])?;
    if k >= classes {
        return Err(Error::LabelOutOfRange { label: k, classes });
    }
    if !(source_prior[k] > 0.0 && target_prior[k] > 0.0) {
        return Err(Error::UndefinedLogRatio { class: k, row: 0 });
    }
    let mut acc = 0.0;
    for i in 0..m {
        let ps = source_posteriors[[i, k]];
        let pt = target_posteriors[[i, k]];
        if !(ps > 0.0 && pt > 0.0) {
            return Err(Error::UndefinedLogRatio { class: k, row: i });
        }
        acc += (ps / pt).ln();
    }
    Ok(acc + m as f64 * (target_prior[k] / source_prior[k]).ln())
}

/// Upper tail `P[χ²(dof) > x]`, via the regularized incomplete gamma function.
pub fn chi2_survival(x: f64, dof: usize) -> Result<f64> {
    if dof == 0 {
        return Err(Error::InvalidParameter("chi-square needs dof >= 1".into()));
    }
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!("chi-square variate {x} must be >= 0")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(dof as f64 / 2.0, x / 2.0).clamp(0.0, 1.0))
}

/// Lanczos approximation (g = 7, n = 9) of `ln Γ(x)` for `x > 0`.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma `Q(a, x)`.
fn gamma_q(a: f64, x: f64) -> f64 {
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..10_000 {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * 1e-16 {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Modified Lentz evaluation of the continued fraction for `Q(a, x)`.
fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..10_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Runs EM on the classifier's smoothed target posteriors and tests the
/// corrected model against the uncorrected one.
///
/// The source prior is the classifier's training class distribution.
pub fn prior_shift_adapt(
    clf: &SoftmaxClassifier,
    target_features: &ArrayView2<f64>,
    opts: &PriorShiftOptions,
) -> Result<PriorShiftResult> {
    let prior = clf
        .class_prior()
        .ok_or_else(|| Error::InvalidParameter("classifier carries no training class prior".into()))?;
    prior_shift_adapt_with_prior(clf, prior, target_features, opts)
}

/// As [`prior_shift_adapt`] with an explicit source prior.
pub fn prior_shift_adapt_with_prior(
    clf: &SoftmaxClassifier,
    source_prior: &ProbVector,
    target_features: &ArrayView2<f64>,
    opts: &PriorShiftOptions,
) -> Result<PriorShiftResult> {
    if target_features.nrows() == 0 {
        return Err(Error::EmptySample);
    }
    let raw = clf.predict_proba_batch(target_features)?;
    let posteriors = smooth_posteriors(&raw.view());
    adapt_posteriors(&posteriors.view(), source_prior, opts)
}

/// EM plus test on already smoothed source posteriors.
pub fn adapt_posteriors(
    source_posteriors: &ArrayView2<f64>,
    source_prior: &ProbVector,
    opts: &PriorShiftOptions,
) -> Result<PriorShiftResult> {
    let classes = source_posteriors.ncols();
    let em = em_run(source_posteriors, source_prior, opts.tol, opts.max_iter)?;
    // Posteriors consistent with the final prior make the statistic the
    // same for every class.
    let (_, consistent) = em_step(source_posteriors, source_prior, &em.final_priors)?;
    let test_statistic = if classes > 1 {
        likelihood_ratio_statistic(source_posteriors, &consistent.view(), source_prior, &em.final_priors, 0)?
    } else {
        0.0
    };
    let chi2_variate = 2.0 * test_statistic.abs();
    let p_value = chi2_survival(chi2_variate, classes.saturating_sub(1).max(1))?;
    Ok(PriorShiftResult {
        em,
        test_statistic,
        chi2_variate,
        p_value,
        significant: p_value <= opts.alpha,
    })
}
