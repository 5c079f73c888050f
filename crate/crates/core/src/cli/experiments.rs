//! Scenario runners. Each works on one seed and returns a serializable
//! record plus its rows of the trace file; aggregation happens afterwards
//! in seed order.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use super::config::{BiasParams, CovariateShiftParams, DriftParams, JdotParams, MixtureParams, PriorShiftParams};
use crate::covshift::kmm_weights;
use crate::data::{LabeledDataset, ProbVector, Standardizer};
use crate::drift::sweep_cell;
use crate::error::{Error, Result};
use crate::jdot::jdot_fit;
use crate::linalg::median;
use crate::models::{fit_ridge, fit_softmax, fit_softmax_with, KernelSpec, SoftmaxClassifier, SoftmaxOptions};
use crate::priorshift::{em_step, prior_shift_adapt, smooth_posteriors, PriorShiftOptions};
use crate::rng::SeededRng;
use crate::synth::{
    bias_individual_feature, bias_joint_feature, sample_mixture, shifted_regression, stratified_source, subspace_shift,
    GaussianMixtureSpec, ShiftedRegressionSpec, SubspaceMap,
};

const SPLIT_STREAM: u64 = 101;
const BOOTSTRAP_STREAM: u64 = 102;
const BIAS_STREAM: u64 = 103;

/// One trace row, already formatted.
pub type TraceRow = Vec<String>;

pub(crate) fn fmt(v: f64) -> String {
    format!("{v}")
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n.max(1) as f64
}

fn mean_vectors<'a>(rows: impl IntoIterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    let mut n = 0usize;
    for row in rows {
        if acc.is_empty() {
            acc = vec![0.0; row.len()];
        }
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
        n += 1;
    }
    acc.iter().map(|a| a / n.max(1) as f64).collect()
}

fn mixture_spec(mixture: &MixtureParams, priors: &[f64], seed: u64) -> Result<GaussianMixtureSpec> {
    GaussianMixtureSpec::new(
        mixture.means.clone(),
        mixture.variances.clone(),
        ProbVector::new(priors.to_vec())?,
        seed,
    )
}

fn accuracy(posteriors: &ArrayView2<f64>, labels: &[usize]) -> f64 {
    let hits = posteriors
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(
                (0, f64::NEG_INFINITY),
                |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc },
            );
            best.0 == y
        })
        .count();
    hits as f64 / labels.len().max(1) as f64
}

fn class_labels(data: &LabeledDataset) -> Result<(&[usize], usize)> {
    data.class_indices()
        .ok_or_else(|| Error::InvalidParameter("scenario needs class labels".into()))
}

fn class_frequencies(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; classes];
    for &y in labels {
        counts[y] += 1.0;
    }
    counts.iter().map(|c| c / labels.len().max(1) as f64).collect()
}

// ---------------------------------------------------------------- prior shift

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PriorShiftSummary {
    pub true_priors: Vec<f64>,
    pub em_priors: Vec<f64>,
    pub acc_no_adjust: f64,
    pub acc_em: f64,
    pub acc_true_priors: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PriorShiftRun {
    pub split: usize,
    pub training: usize,
    #[serde(flatten)]
    pub metrics: PriorShiftSummary,
    pub em_iterations: usize,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct PriorShiftSeed {
    pub seed: u64,
    pub runs: Vec<PriorShiftRun>,
    pub mean: PriorShiftSummary,
}

impl PriorShiftSummary {
    pub fn average<'a>(items: impl Iterator<Item = &'a PriorShiftSummary> + Clone) -> Self {
        PriorShiftSummary {
            true_priors: mean_vectors(items.clone().map(|s| &s.true_priors)),
            em_priors: mean_vectors(items.clone().map(|s| &s.em_priors)),
            acc_no_adjust: mean(items.clone().map(|s| s.acc_no_adjust)),
            acc_em: mean(items.clone().map(|s| s.acc_em)),
            acc_true_priors: mean(items.map(|s| s.acc_true_priors)),
        }
    }
}

fn split_seed(seed: u64, split: usize) -> u64 {
    let mut rng = SeededRng::derive(seed, SPLIT_STREAM + 1000 * split as u64);
    rng.next_u64()
}

/// Balanced training rows plus the largest held-out subset whose class
/// proportions match `target` as closely as whole counts allow.
fn split_rows(
    data: &LabeledDataset,
    per_class: usize,
    target: &[f64],
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    let (labels, classes) = class_labels(data)?;
    if target.len() != classes {
        return Err(Error::DimensionMismatch {
            expected: classes,
            found: target.len(),
        });
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let mut by_class = vec![Vec::new(); classes];
    for i in order {
        by_class[labels[i]].push(i);
    }
    let mut train = Vec::new();
    let mut rest = Vec::with_capacity(classes);
    for (k, rows) in by_class.iter().enumerate() {
        if rows.len() <= per_class {
            return Err(Error::InvalidParameter(format!(
                "class {k} has {} rows; {per_class} are needed for training plus one held out",
                rows.len()
            )));
        }
        train.extend_from_slice(&rows[..per_class]);
        rest.push(&rows[per_class..]);
    }
    let size = rest
        .iter()
        .zip(target)
        .filter(|(_, &p)| p > 0.0)
        .map(|(rows, &p)| rows.len() as f64 / p)
        .fold(f64::INFINITY, f64::min);
    let mut test = Vec::new();
    for (rows, &p) in rest.iter().zip(target) {
        let take = ((size * p).floor() as usize).min(rows.len());
        test.extend_from_slice(&rows[..take]);
    }
    if test.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok((data.select(&train)?, data.select(&test)?))
}

fn bootstrap(data: &LabeledDataset, rng: &mut SeededRng) -> Result<LabeledDataset> {
    let rows: Vec<usize> = (0..data.len()).map(|_| rng.below(data.len())).collect();
    data.select(&rows)
}

pub fn prior_shift_seed(
    params: &PriorShiftParams,
    csv: Option<&LabeledDataset>,
    seed: u64,
) -> Result<(PriorShiftSeed, Vec<TraceRow>)> {
    let opts = PriorShiftOptions {
        tol: params.em_tol,
        max_iter: params.em_max_iter,
        alpha: params.alpha,
    };
    let mut runs = Vec::new();
    let mut trace = Vec::new();
    for split in 0..params.splits {
        let s = split_seed(seed, split);
        let (train, test) = match csv {
            Some(data) => split_rows(data, params.train_per_class, &params.target_priors, s)?,
            None => {
                let classes = params.target_priors.len();
                let balanced = vec![1.0 / classes as f64; classes];
                let spec = mixture_spec(&params.mixture, &balanced, s)?;
                let train = stratified_source(&spec, params.train_per_class)?;
                let target = mixture_spec(&params.mixture, &params.target_priors, s ^ 0x5eed)?;
                (train, sample_mixture(&target, params.target_size)?)
            }
        };
        let (test_labels, classes) = class_labels(&test)?;
        let true_priors = class_frequencies(test_labels, classes);
        let mut boot_rng = SeededRng::derive(s, BOOTSTRAP_STREAM);
        for training in 0..params.trainings {
            let sample = bootstrap(&train, &mut boot_rng)?;
            let clf: SoftmaxClassifier = fit_softmax(&sample, &Array1::ones(sample.len()).view(), params.softmax_reg)?;
            let result = prior_shift_adapt(&clf, &test.features(), &opts)?;
            let raw = smooth_posteriors(&clf.predict_proba_batch(&test.features())?.view());
            let source_prior = clf.class_prior().expect("fitted classifier has a prior");
            let truth = ProbVector::normalized(true_priors.iter().map(|p| p.max(1e-12)).collect())?;
            let (_, oracle) = em_step(&raw.view(), source_prior, &truth)?;
            for (iteration, prior) in result.em.prior_trajectory.iter().enumerate() {
                let mut row = vec![
                    seed.to_string(),
                    split.to_string(),
                    training.to_string(),
                    iteration.to_string(),
                ];
                row.extend(prior.as_slice().iter().map(|&p| fmt(p)));
                trace.push(row);
            }
            runs.push(PriorShiftRun {
                split,
                training,
                metrics: PriorShiftSummary {
                    true_priors: true_priors.clone(),
                    em_priors: result.em.final_priors.as_slice().to_vec(),
                    acc_no_adjust: accuracy(&raw.view(), test_labels),
                    acc_em: accuracy(&result.em.target_posteriors.view(), test_labels),
                    acc_true_priors: accuracy(&oracle.view(), test_labels),
                },
                em_iterations: result.em.iterations_used,
                p_value: result.p_value,
                significant: result.significant,
            });
        }
    }
    let mean = PriorShiftSummary::average(runs.iter().map(|r| &r.metrics));
    Ok((PriorShiftSeed { seed, runs, mean }, trace))
}

pub fn prior_shift_trace_header(classes: usize) -> Vec<String> {
    let mut header: Vec<String> = ["seed", "split", "training", "iteration"].map(String::from).to_vec();
    header.extend((0..classes).map(|k| format!("prior_{k}")));
    header
}

// ------------------------------------------------------------ covariate shift

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RegErrors {
    pub reg: f64,
    pub error_unweighted: f64,
    pub error_kmm: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovariateCase {
    /// `joint`, or `column-j` for a bias on feature `j`.
    pub case: String,
    pub source_size: usize,
    pub target_size: usize,
    pub kernel_bandwidth: f64,
    pub kmm_objective: f64,
    pub kmm_converged: bool,
    pub weight_max: f64,
    pub errors: Vec<RegErrors>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovariateSeed {
    pub seed: u64,
    pub cases: Vec<CovariateCase>,
}

fn error_rate(clf: &SoftmaxClassifier, data: &LabeledDataset) -> Result<f64> {
    let (labels, _) = class_labels(data)?;
    let predicted = clf.predict(&data.features())?;
    let wrong = predicted.iter().zip(labels).filter(|(p, y)| p != y).count();
    Ok(wrong as f64 / labels.len().max(1) as f64)
}

fn standardized(data: &LabeledDataset, scaler: &Standardizer) -> Result<LabeledDataset> {
    let (x, labels, weights) = data.clone().into_parts();
    LabeledDataset::with_weights(scaler.transform(&x.view()), labels, weights)
}

/// Trains unweighted and KMM-weighted softmax models on `train` and scores
/// both on `test` for every regularization strength.
pub fn covariate_case(
    params: &CovariateShiftParams,
    case: String,
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<CovariateCase> {
    let kernel = match params.kernel_bandwidth {
        Some(b) => KernelSpec::gaussian(b)?,
        None => KernelSpec::median_heuristic(&train.features(), &test.features())?,
    };
    let qp = kmm_weights(&train.features(), &test.features(), &kernel, params.kmm_bound)?;
    let weights = Array1::from(qp.weights.0.clone());
    let ones = Array1::ones(train.len());
    let opts = SoftmaxOptions {
        standardize: false,
        ..SoftmaxOptions::default()
    };
    let errors = params
        .regs
        .iter()
        .map(|&reg| {
            let plain = fit_softmax_with(train, &ones.view(), reg, &opts)?;
            let weighted = fit_softmax_with(train, &weights.view(), reg, &opts)?;
            Ok(RegErrors {
                reg,
                error_unweighted: error_rate(&plain, test)?,
                error_kmm: error_rate(&weighted, test)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CovariateCase {
        case,
        source_size: train.len(),
        target_size: test.len(),
        kernel_bandwidth: kernel.bandwidth,
        kmm_objective: qp.objective,
        kmm_converged: qp.converged,
        weight_max: weights.iter().copied().fold(0.0, f64::max),
        errors,
    })
}

pub fn covariate_seed(
    params: &CovariateShiftParams,
    csv: Option<&LabeledDataset>,
    seed: u64,
) -> Result<(CovariateSeed, Vec<TraceRow>)> {
    let pool = match csv {
        Some(data) => data.clone(),
        None => sample_mixture(
            &mixture_spec(&params.mixture, &params.class_priors, seed)?,
            params.pool_size,
        )?,
    };
    let mut order: Vec<usize> = (0..pool.len()).collect();
    SeededRng::derive(seed, SPLIT_STREAM).shuffle(&mut order);
    let cut = ((pool.len() as f64) * params.test_fraction).round() as usize;
    if cut == 0 || cut >= pool.len() {
        return Err(Error::InvalidParameter("test_fraction leaves an empty split".into()));
    }
    let (mut train, mut test) = (pool.select(&order[cut..])?, pool.select(&order[..cut])?);
    if params.standardize {
        let scaler = Standardizer::fit(&train.features());
        train = standardized(&train, &scaler)?;
        test = standardized(&test, &scaler)?;
    }
    let bias_seed = SeededRng::derive(seed, BIAS_STREAM).next_u64();
    let mut cases = Vec::new();
    match &params.bias {
        BiasParams::Joint { gamma } => {
            let biased = bias_joint_feature(&train, *gamma, bias_seed)?;
            cases.push(covariate_case(params, "joint".into(), &biased, &test)?);
        }
        BiasParams::Individual { columns, .. } => {
            let columns: Vec<usize> = columns.clone().unwrap_or_else(|| (0..pool.dim()).collect());
            for column in columns {
                if column >= pool.dim() {
                    return Err(Error::InvalidParameter(format!("bias column {column} out of range")));
                }
                let bias = params.individual_bias(column).expect("individual bias");
                let biased = bias_individual_feature(&test, &bias, bias_seed ^ column as u64)?;
                cases.push(covariate_case(params, format!("column-{column}"), &train, &biased)?);
            }
        }
    }
    let trace = cases
        .iter()
        .flat_map(|c| {
            c.errors.iter().map(move |e| {
                vec![
                    seed.to_string(),
                    c.case.clone(),
                    fmt(e.reg),
                    fmt(e.error_unweighted),
                    fmt(e.error_kmm),
                ]
            })
        })
        .collect();
    Ok((CovariateSeed { seed, cases }, trace))
}

pub const COVARIATE_TRACE_HEADER: [&str; 5] = ["seed", "case", "reg", "error_unweighted", "error_kmm"];

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CovariateAggregate {
    pub case: String,
    pub reg: f64,
    pub mean_error_unweighted: f64,
    pub mean_error_kmm: f64,
    /// Mean of `error_unweighted − error_kmm`; positive when reweighting helps.
    pub mean_error_reduction: f64,
}

pub fn aggregate_covariate(seeds: &[CovariateSeed]) -> Vec<CovariateAggregate> {
    let Some(first) = seeds.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (c, case) in first.cases.iter().enumerate() {
        for (r, reg) in case.errors.iter().enumerate() {
            let cell = |f: fn(&RegErrors) -> f64| mean(seeds.iter().map(|s| f(&s.cases[c].errors[r])));
            out.push(CovariateAggregate {
                case: case.case.clone(),
                reg: reg.reg,
                mean_error_unweighted: cell(|e| e.error_unweighted),
                mean_error_kmm: cell(|e| e.error_kmm),
                mean_error_reduction: cell(|e| e.error_unweighted - e.error_kmm),
            });
        }
    }
    out
}

// ----------------------------------------------------------------------- jdot

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct JdotSeed {
    pub seed: u64,
    pub mse_naive: f64,
    pub mse_jdot: f64,
    pub objective_trace: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
}

fn mse(pred: &Array1<f64>, truth: &[f64]) -> f64 {
    mean(pred.iter().zip(truth).map(|(p, y)| (p - y).powi(2)))
}

pub fn jdot_seed(params: &JdotParams, csv: Option<&LabeledDataset>, seed: u64) -> Result<(JdotSeed, Vec<TraceRow>)> {
    let (source, shifted) = match csv {
        Some(data) => {
            let map = params
                .map
                .clone()
                .unwrap_or_else(|| SubspaceMap::translation(Array1::from_elem(data.dim(), params.shift)));
            (data.clone(), subspace_shift(data, &map)?)
        }
        None => shifted_regression(&ShiftedRegressionSpec {
            samples: params.samples,
            slope: params.slope,
            intercept: params.intercept,
            noise: params.noise,
            shift: params.shift,
            seed,
        })?,
    };
    let truth = match &shifted.hidden_labels {
        crate::data::Labels::Targets(t) => t.clone(),
        _ => return Err(Error::InvalidParameter("jdot needs real-valued targets".into())),
    };
    let targets = source
        .targets()
        .ok_or_else(|| Error::InvalidParameter("jdot needs real-valued targets".into()))?;
    let naive = fit_ridge(
        &source.features(),
        &ArrayView1::from(targets),
        &Array1::ones(source.len()).view(),
        params.solver.ridge_reg,
    )?;
    let target_x = shifted.target_features.view();
    let result = jdot_fit(&source, &target_x, &params.solver)?;
    let record = JdotSeed {
        seed,
        mse_naive: mse(&naive.predict(&target_x)?, &truth),
        mse_jdot: mse(&result.model.predict(&target_x)?, &truth),
        objective_trace: result.objective_trace.clone(),
        lambda: result.lambda,
        iterations: result.iterations,
    };
    let trace = record
        .objective_trace
        .iter()
        .enumerate()
        .map(|(i, v)| vec![seed.to_string(), i.to_string(), fmt(*v)])
        .collect();
    Ok((record, trace))
}

pub const JDOT_TRACE_HEADER: [&str; 3] = ["seed", "half_step", "objective"];

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct JdotAggregate {
    pub mean_mse_naive: f64,
    pub mean_mse_jdot: f64,
    pub median_mse_ratio: f64,
}

pub fn aggregate_jdot(seeds: &[JdotSeed]) -> JdotAggregate {
    let mut ratios: Vec<f64> = seeds.iter().map(|s| s.mse_jdot / s.mse_naive).collect();
    JdotAggregate {
        mean_mse_naive: mean(seeds.iter().map(|s| s.mse_naive)),
        mean_mse_jdot: mean(seeds.iter().map(|s| s.mse_jdot)),
        median_mse_ratio: if ratios.is_empty() {
            f64::NAN
        } else {
            median(&mut ratios)
        },
    }
}

// ---------------------------------------------------------------------- drift

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DriftCell {
    pub delta: f64,
    pub window: usize,
    pub risk: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DriftSeed {
    pub seed: u64,
    /// Tail-mean risk per grid cell, Δ-major.
    pub cells: Vec<DriftCell>,
}

pub fn drift_seed(params: &DriftParams, seed: u64) -> Result<DriftSeed> {
    let base = params.tracking();
    let mut cells = Vec::with_capacity(params.deltas.len() * params.windows.len());
    for &delta in &params.deltas {
        for &window in &params.windows {
            let risk = sweep_cell(params.concept, delta, window, seed, &base, params.tail)?;
            cells.push(DriftCell { delta, window, risk });
        }
    }
    Ok(DriftSeed { seed, cells })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct DriftAggregate {
    pub median_risk: Vec<DriftCell>,
    /// Per window, adjacent Δ pairs whose median risk decreases.
    pub delta_inversions: Vec<usize>,
}

pub fn aggregate_drift(params: &DriftParams, seeds: &[DriftSeed]) -> DriftAggregate {
    let nw = params.windows.len();
    let median_risk: Vec<DriftCell> = (0..params.deltas.len() * nw)
        .map(|c| {
            let mut risks: Vec<f64> = seeds.iter().map(|s| s.cells[c].risk).collect();
            DriftCell {
                delta: params.deltas[c / nw],
                window: params.windows[c % nw],
                risk: median(&mut risks),
            }
        })
        .collect();
    let delta_inversions = (0..nw)
        .map(|j| {
            (1..params.deltas.len())
                .filter(|&i| median_risk[i * nw + j].risk < median_risk[(i - 1) * nw + j].risk)
                .count()
        })
        .collect();
    DriftAggregate {
        median_risk,
        delta_inversions,
    }
}

pub const DRIFT_TRACE_HEADER: [&str; 3] = ["delta", "m", "median_risk"];

pub fn drift_trace(aggregate: &DriftAggregate) -> Vec<TraceRow> {
    aggregate
        .median_risk
        .iter()
        .map(|c| vec![fmt(c.delta), c.window.to_string(), fmt(c.risk)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Labels;
    use ndarray::Array2;

    fn labeled(labels: Vec<usize>) -> LabeledDataset {
        let n = labels.len();
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        LabeledDataset::new(
            x,
            Labels::Classes {
                indices: labels,
                classes: 2,
            },
        )
        .unwrap()
    }

    #[test]
    fn split_rows_balances_training_and_matches_target() {
        let data = labeled((0..200).map(|i| usize::from(i % 4 != 0)).collect());
        let (train, test) = split_rows(&data, 10, &[0.2, 0.8], 5).unwrap();
        let (tl, _) = train.class_indices().unwrap();
        assert_eq!(class_frequencies(tl, 2), vec![0.5, 0.5]);
        let (sl, _) = test.class_indices().unwrap();
        let freq = class_frequencies(sl, 2);
        assert!((freq[0] - 0.2).abs() < 0.01, "{freq:?}");
        assert!(split_rows(&data, 60, &[0.2, 0.8], 5).is_err());
    }

    #[test]
    fn accuracy_uses_argmax() {
        let post = ndarray::array![[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]];
        assert_eq!(accuracy(&post.view(), &[0, 1, 1]), 2.0 / 3.0);
    }

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456789.123] {
            assert_eq!(fmt(v).parse::<f64>().unwrap(), v);
        }
    }
}
