//! Synthetic generators with known class conditionals, plus the sample
//! selection biases used to simulate covariate shift.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, Labels, ProbVector};
use crate::error::{Error, Result};
use crate::linalg::is_invertible;
use crate::rng::SeededRng;

// stream tags keep the generators independent under a shared seed
const MIXTURE_STREAM: u64 = 1;
const STRATIFIED_STREAM: u64 = 2;
const INDIVIDUAL_BIAS_STREAM: u64 = 3;
const JOINT_BIAS_STREAM: u64 = 4;
const REGRESSION_STREAM: u64 = 5;

/// Class-conditional Gaussians with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub means: Vec<Vec<f64>>,
    /// Per-class diagonal variances.
    pub variances: Vec<Vec<f64>>,
    pub priors: ProbVector,
    pub seed: u64,
}

impl GaussianMixtureSpec {
    pub fn new(means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>, priors: ProbVector, seed: u64) -> Result<Self> {
        let spec = Self {
            means,
            variances,
            priors,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Isotropic classes sharing one variance.
    pub fn isotropic(means: Vec<Vec<f64>>, variance: f64, priors: ProbVector, seed: u64) -> Result<Self> {
        let variances = means.iter().map(|m| vec![variance; m.len()]).collect();
        Self::new(means, variances, priors, seed)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn with_priors(&self, priors: ProbVector) -> Result<Self> {
        let spec = Self { priors, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let k = self.means.len();
        if k == 0 || self.dim() == 0 {
            return Err(Error::EmptySample);
        }
        for len in [self.variances.len(), self.priors.len()] {
            if len != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    found: len,
                });
            }
        }
        let d = self.dim();
        for (m, v) in self.means.iter().zip(&self.variances) {
            for len in [m.len(), v.len()] {
                if len != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: len,
                    });
                }
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("mixture mean".into()));
            }
            if let Some(bad) = v.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidParameter(format!(
                    "variances must be positive, got {bad}"
                )));
            }
        }
        Ok(())
    }

    fn draw(&self, class: usize, rng: &mut SeededRng) -> impl Iterator<Item = f64> + '_ {
        let (mean, var) = (&self.means[class], &self.variances[class]);
        let draws: Vec<f64> = mean.iter().zip(var).map(|(m, v)| rng.gaussian(*m, v.sqrt())).collect();
        draws.into_iter()
    }
}

/// `m` i.i.d. pairs: label from the priors, features from that class.
pub fn sample_mixture(spec: &GaussianMixtureSpec, m: usize) -> Result<LabeledDataset> {
    if m == 0 {
        return Err(Error::EmptySample);
    }
    spec.validate()?;
    let mut rng = SeededRng::derive(spec.seed, MIXTURE_STREAM);
    let d = spec.dim();
    let mut features = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for _ in 0..m {
        let class = rng.categorical(spec.priors.as_slice());
        labels.push(class);
        features.extend(spec.draw(class, &mut rng));
    }
    let x = Array2::from_shape_vec((m, d), features).expect("shape");
    LabeledDataset::classification(x, labels, spec.classes())
}

/// Exactly `per_class_count` rows of every class, in shuffled order.
pub fn stratified_source(spec: &GaussianMixtureSpec, per_class_count: usize) -> Result<LabeledDataset> {
    if per_class_count == 0 {
        return Err(Error::EmptySample);
    }
    spec.validate()?;
    let mut rng = SeededRng::derive(spec.seed, STRATIFIED_STREAM);
    let mut labels: Vec<usize> = (0..spec.classes())
        .flat_map(|k| std::iter::repeat_n(k, per_class_count))
        .collect();
    rng.shuffle(&mut labels);
    let d = spec.dim();
    let mut features = Vec::with_capacity(labels.len() * d);
    for &class in &labels {
        features.extend(spec.draw(class, &mut rng));
    }
    let x = Array2::from_shape_vec((labels.len(), d), features).expect("shape");
    LabeledDataset::classification(x, labels, spec.classes())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualBias {
    pub column: usize,
    pub threshold: f64,
    pub p_low: f64,
    pub p_high: f64,
}

impl Default for IndividualBias {
    fn default() -> Self {
        Self {
            column: 0,
            threshold: 5.0,
            p_low: 0.2,
            p_high: 0.8,
        }
    }
}

fn check_probability(p: f64, what: &str) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{what} must lie in [0, 1], got {p}")))
    }
}

fn keep_rows(data: &LabeledDataset, mut keep: impl FnMut(usize, ArrayView1<f64>) -> bool) -> Result<LabeledDataset> {
    let features = data.features();
    let rows: Vec<usize> = features
        .axis_iter(Axis(0))
        .enumerate()
        .filter_map(|(i, row)| keep(i, row).then_some(i))
        .collect();
    data.select(&rows)
}

/// Keeps each row with probability `p_low` when the chosen feature is at most
/// `threshold` and `p_high` otherwise.
pub fn bias_individual_feature(data: &LabeledDataset, bias: &IndividualBias, seed: u64) -> Result<LabeledDataset> {
    check_probability(bias.p_low, "p_low")?;
    check_probability(bias.p_high, "p_high")?;
    if bias.column >= data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: bias.column + 1,
        });
    }
    let mut rng = SeededRng::derive(seed, INDIVIDUAL_BIAS_STREAM);
    keep_rows(data, |_, row| {
        let p = if row[bias.column] <= bias.threshold {
            bias.p_low
        } else {
            bias.p_high
        };
        rng.bernoulli(p)
    })
}

/// Keeps each row with probability `exp(−γ‖x − x̄‖²)`, `x̄` the sample mean.
pub fn bias_joint_feature(data: &LabeledDataset, gamma: f64, seed: u64) -> Result<LabeledDataset> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 0, got {gamma}")));
    }
    let features = data.features();
    let mean = features.mean_axis(Axis(0)).ok_or(Error::EmptySample)?;
    let mut rng = SeededRng::derive(seed, JOINT_BIAS_STREAM);
    keep_rows(data, |_, row| {
        let dist: f64 = row.iter().zip(mean.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        rng.bernoulli((-gamma * dist).exp())
    })
}

/// Invertible distortion applied to source features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SubspaceMap {
    /// `x ↦ A x + b`.
    Affine { matrix: Array2<f64>, offset: Array1<f64> },
    /// Coordinatewise `x ↦ shift + scale·sign(x)·|x|^power`.
    Monotone1d { scale: f64, shift: f64, power: f64 },
}

impl SubspaceMap {
    pub fn translation(offset: Array1<f64>) -> Self {
        let d = offset.len();
        SubspaceMap::Affine {
            matrix: Array2::eye(d),
            offset,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            SubspaceMap::Affine { matrix, offset } => {
                if matrix.dim() != (dim, dim) || offset.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: offset.len(),
                    });
                }
                if !is_invertible(&matrix.view()) {
                    return Err(Error::Singular);
                }
                Ok(())
            }
            SubspaceMap::Monotone1d { scale, shift, power } => {
                if !(*scale != 0.0 && scale.is_finite() && shift.is_finite() && *power > 0.0 && power.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "monotone map needs a nonzero scale and a positive power".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    pub fn apply(&self, x: &ArrayView1<f64>) -> Array1<f64> {
        match self {
            SubspaceMap::Affine { matrix, offset } => matrix.dot(x) + offset,
            SubspaceMap::Monotone1d { scale, shift, power } => {
                x.mapv(|v| shift + scale * v.signum() * v.abs().powf(*power))
            }
        }
    }
}

/// Target sample of a subspace-mapping shift; the labels are for scoring only.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceShift {
    pub target_features: Array2<f64>,
    pub hidden_labels: Labels,
}

pub fn subspace_shift(data: &LabeledDataset, map: &SubspaceMap) -> Result<SubspaceShift> {
    map.validate(data.dim())?;
    let features = data.features();
    let mut out = Array2::zeros(features.dim());
    for (i, row) in features.axis_iter(Axis(0)).enumerate() {
        out.row_mut(i).assign(&map.apply(&row));
    }
    Ok(SubspaceShift {
        target_features: out,
        hidden_labels: data.labels().clone(),
    })
}

/// Linear regression task seen through a translated feature space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftedRegressionSpec {
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
    pub noise: f64,
    /// Target features are source-distributed features plus this offset.
    pub shift: f64,
    pub seed: u64,
}

impl Default for ShiftedRegressionSpec {
    fn default() -> Self {
        Self {
            samples: 200,
            slope: 2.0,
            intercept: 0.0,
            noise: 0.1,
            shift: 1.0,
            seed: 0,
        }
    }
}

/// Source pairs with `x ~ U[0, 1]`, `y = slope·x + intercept + noise`; an
/// independent target draw translated by `shift`, with noiseless labels
/// for scoring.
pub fn shifted_regression(spec: &ShiftedRegressionSpec) -> Result<(LabeledDataset, SubspaceShift)> {
    if spec.samples == 0 {
        return Err(Error::EmptySample);
    }
    if !(spec.noise >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise must be >= 0, got {}",
            spec.noise
        )));
    }
    let mut rng = SeededRng::derive(spec.seed, REGRESSION_STREAM);
    let m = spec.samples;
    let xs: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| spec.slope * x + spec.intercept + spec.noise * rng.normal())
        .collect();
    let xt: Vec<f64> = (0..m).map(|_| rng.uniform()).collect();
    let truth: Vec<f64> = xt.iter().map(|x| spec.slope * x + spec.intercept).collect();
    let source = LabeledDataset::regression(Array2::from_shape_vec((m, 1), xs).expect("shape"), ys)?;
    let unshifted = LabeledDataset::regression(Array2::from_shape_vec((m, 1), xt).expect("shape"), truth)?;
    let target = subspace_shift(&unshifted, &SubspaceMap::translation(Array1::from_elem(1, spec.shift)))?;
    Ok((source, target))
}
