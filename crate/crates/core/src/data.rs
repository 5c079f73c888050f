//! Value types shared by every module: labeled samples, probability vectors
//! and discrete measures.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::column_moments;

/// Default tolerance for sum-to-one checks.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Label column of a [`LabeledDataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    /// Dense class indices in `0..classes`.
    Classes { indices: Vec<usize>, classes: usize },
    /// Real regression targets.
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { indices, .. } => indices.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, rows: &[usize]) -> Labels {
        match self {
            Labels::Classes { indices, classes } => Labels::Classes {
                indices: rows.iter().map(|&r| indices[r]).collect(),
                classes: *classes,
            },
            Labels::Targets(t) => Labels::Targets(rows.iter().map(|&r| t[r]).collect()),
        }
    }
}

/// Feature matrix (rows are observations) with labels and optional row weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Labels,
    weights: Option<Array1<f64>>,
}

fn check_finite<'a>(values: impl IntoIterator<Item = &'a f64>, what: &str) -> Result<()> {
    for (i, v) in values.into_iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{what}[{i}]")));
        }
    }
    Ok(())
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Labels) -> Result<Self> {
        Self::with_weights(features, labels, None)
    }

    pub fn with_weights(features: Array2<f64>, labels: Labels, weights: Option<Array1<f64>>) -> Result<Self> {
        let (m, p) = features.dim();
        if m == 0 {
            return Err(Error::EmptySample);
        }
        if p == 0 {
            return Err(Error::InvalidParameter("feature matrix has no columns".into()));
        }
        if labels.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: labels.len(),
            });
        }
        check_finite(features.iter(), "features")?;
        match &labels {
            Labels::Classes { indices, classes } => {
                if let Some(&bad) = indices.iter().find(|&&l| l >= *classes) {
                    return Err(Error::LabelOutOfRange {
                        label: bad,
                        classes: *classes,
                    });
                }
            }
            Labels::Targets(t) => check_finite(t.iter(), "labels")?,
        }
        if let Some(w) = &weights {
            if w.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    found: w.len(),
                });
            }
            check_finite(w.iter(), "weights")?;
            if let Some(&neg) = w.iter().find(|&&v| v < 0.0) {
                return Err(Error::NegativeWeight(neg));
            }
        }
        Ok(Self {
            features,
            labels,
            weights,
        })
    }

    pub fn classification(features: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        Self::new(
            features,
            Labels::Classes {
                indices: labels,
                classes,
            },
        )
    }

    pub fn regression(features: Array2<f64>, targets: Vec<f64>) -> Result<Self> {
        Self::new(features, Labels::Targets(targets))
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row weights, all ones when none were given.
    pub fn weights(&self) -> Array1<f64> {
        self.weights.clone().unwrap_or_else(|| Array1::ones(self.len()))
    }

    pub fn class_indices(&self) -> Option<(&[usize], usize)> {
        match &self.labels {
            Labels::Classes { indices, classes } => Some((indices, *classes)),
            Labels::Targets(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match &self.labels {
            Labels::Targets(t) => Some(t),
            Labels::Classes { .. } => None,
        }
    }

    /// Rows `rows`, in the given order. Errors when `rows` is empty.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySample);
        }
        let features = self.features.select(Axis(0), rows);
        let weights = self
            .weights
            .as_ref()
            .map(|w| rows.iter().map(|&r| w[r]).collect::<Array1<f64>>());
        Ok(Self {
            features,
            labels: self.labels.select(rows),
            weights,
        })
    }

    pub fn into_parts(self) -> (Array2<f64>, Labels, Option<Array1<f64>>) {
        (self.features, self.labels, self.weights)
    }
}

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(values, SIMPLEX_TOL)
    }

    pub fn with_tolerance(values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        check_finite(values.iter(), "probabilities")?;
        if let Some(&neg) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::NegativeWeight(neg));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::NotNormalized { sum, tol });
        }
        Ok(Self(values))
    }

    /// Rescales nonnegative values to sum to one.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptySample);
        }
        check_finite(values.iter(), "probabilities")?;
        if let Some(&neg) = values.iter().find(|&&v| v < 0.0) {
            return Err(Error::NegativeWeight(neg));
        }
        let sum: f64 = values.iter().sum();
        if sum <= 0.0 {
            return Err(Error::VanishingPosteriorMass);
        }
        Ok(Self(values.into_iter().map(|v| v / sum).collect()))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform over zero classes");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = k;
        }
    }
    best
}

/// Weighted point cloud: `support` rows carry positive `weights` summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Array2<f64>,
    weights: Array1<f64>,
}

impl DiscreteMeasure {
    pub fn new(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = support.nrows();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: weights.len(),
            });
        }
        check_finite(support.iter(), "support")?;
        check_finite(weights.iter(), "weights")?;
        if let Some(&bad) = weights.iter().find(|&&w| w <= 0.0) {
            return Err(Error::NegativeWeight(bad));
        }
        let sum = weights.sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::NotNormalized { sum, tol: SIMPLEX_TOL });
        }
        Ok(Self { support, weights })
    }

    /// Rescales positive weights to sum to one.
    pub fn normalized(support: Array2<f64>, weights: Array1<f64>) -> Result<Self> {
        let sum = weights.sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidParameter("weights have no mass".into()));
        }
        Self::new(support, weights / sum)
    }

    pub fn support(&self) -> ArrayView2<'_, f64> {
        self.support.view()
    }

    pub fn weights(&self) -> ArrayView1<'_, f64> {
        self.weights.view()
    }

    pub fn len(&self) -> usize {
        self.support.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.support.ncols()
    }
}

/// Uniform empirical distribution on the rows of `points`.
pub fn empirical_measure(points: Array2<f64>) -> Result<DiscreteMeasure> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let weights = Array1::from_elem(n, 1.0 / n as f64);
    // 1/n summed n times can miss 1 by a few ulps; the tolerance absorbs it
    DiscreteMeasure::new(points, weights)
}

/// Indicator matrix `z[i][k] = 1` iff `labels[i] == k`.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Array2<f64>> {
    let mut z = Array2::zeros((labels.len(), classes));
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        z[[i, l]] = 1.0;
    }
    Ok(z)
}

/// Per-column affine rescaling to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on `x`; constant columns keep scale 1.
    pub fn fit(x: &ArrayView2<f64>) -> Self {
        let (mean, std) = column_moments(x);
        Self {
            mean: mean.to_vec(),
            scale: std.iter().map(|&s| if s > 0.0 { s } else { 1.0 }).collect(),
        }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    pub fn transform_point(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| (v - self.mean[j]) / self.scale[j])
            .collect()
    }
}
