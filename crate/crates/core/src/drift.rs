//! Concept-drift simulator: slowly moving binary concepts on the unit disk,
//! window-based tracking strategies and their true-risk traces.

use std::collections::VecDeque;
use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::median;
use crate::models::{fit_softmax_with, SoftmaxClassifier, SoftmaxOptions};
use crate::rng::SeededRng;

const CONCEPT_STREAM: u64 = 11;
const SAMPLE_STREAM: u64 = 12;
const EVAL_STREAM: u64 = 13;
const MEMORY_STREAM: u64 = 14;

/// Quantile band the shifting threshold sweeps back and forth.
const THRESHOLD_BAND: (f64, f64) = (0.1, 0.9);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConceptKind {
    RotatingHalfspace,
    ShiftingThreshold,
    AbruptSwitch,
}

impl std::str::FromStr for ConceptKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rotating-halfspace" => Ok(Self::RotatingHalfspace),
            "shifting-threshold" => Ok(Self::ShiftingThreshold),
            "abrupt-switch" => Ok(Self::AbruptSwitch),
            other => Err(Error::InvalidParameter(format!("unknown concept kind '{other}'"))),
        }
    }
}

/// Time-indexed deterministic concepts `h_t: ℝ² → {0, 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSequence {
    pub kind: ConceptKind,
    pub delta: f64,
    pub seed: u64,
    /// Step at which an abrupt switch flips the labels.
    pub switch_step: usize,
    initial_angle: f64,
}

/// Default step of the abrupt switch.
pub const DEFAULT_SWITCH_STEP: usize = 50;

pub fn make_concept(kind: ConceptKind, delta: f64, seed: u64) -> Result<ConceptSequence> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!(
            "drift must lie in [0, 1], got {delta}"
        )));
    }
    let mut rng = SeededRng::derive(seed, CONCEPT_STREAM);
    Ok(ConceptSequence {
        kind,
        delta,
        seed,
        switch_step: DEFAULT_SWITCH_STEP,
        initial_angle: rng.uniform_range(0.0, 2.0 * PI),
    })
}

/// CDF of the first coordinate under the uniform distribution on the unit disk.
fn disk_marginal_cdf(b: f64) -> f64 {
    let b = b.clamp(-1.0, 1.0);
    0.5 + (b * (1.0 - b * b).sqrt() + b.asin()) / PI
}

fn disk_marginal_quantile(q: f64) -> f64 {
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if disk_marginal_cdf(mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl ConceptSequence {
    pub fn with_switch_step(mut self, step: usize) -> Self {
        self.switch_step = step;
        self
    }

    /// Normal angle of the halfspace at step `t`.
    pub fn angle(&self, t: usize) -> f64 {
        match self.kind {
            ConceptKind::RotatingHalfspace => self.initial_angle + PI * self.delta * t as f64,
            _ => self.initial_angle,
        }
    }

    /// Threshold on the first coordinate at step `t`. The marginal mass
    /// below it starts at 1/2 and moves by `delta` per step, bouncing
    /// between the edges of the band.
    pub fn threshold(&self, t: usize) -> f64 {
        let (lo, hi) = THRESHOLD_BAND;
        let width = hi - lo;
        let travel = (0.5 - lo + self.delta * t as f64) % (2.0 * width);
        let offset = if travel <= width { travel } else { 2.0 * width - travel };
        disk_marginal_quantile(lo + offset)
    }

    /// The concept in force at step `t`, resolved once so that labeling a
    /// batch does not repeat the threshold inversion.
    pub fn at(&self, t: usize) -> Concept {
        match self.kind {
            ConceptKind::RotatingHalfspace => Concept::Halfspace {
                angle: self.angle(t),
                flipped: false,
            },
            ConceptKind::ShiftingThreshold => Concept::Threshold(self.threshold(t)),
            ConceptKind::AbruptSwitch => Concept::Halfspace {
                angle: self.initial_angle,
                flipped: t >= self.switch_step,
            },
        }
    }

    pub fn label(&self, t: usize, x: &ArrayView1<f64>) -> usize {
        self.at(t).label(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concept {
    Halfspace { angle: f64, flipped: bool },
    Threshold(f64),
}

impl Concept {
    pub fn label(&self, x: &ArrayView1<f64>) -> usize {
        match *self {
            Concept::Halfspace { angle, flipped } => {
                let side = usize::from(angle.cos() * x[0] + angle.sin() * x[1] >= 0.0);
                if flipped {
                    1 - side
                } else {
                    side
                }
            }
            Concept::Threshold(b) => usize::from(x[0] >= b),
        }
    }
}

/// Uniform draw from the unit disk.
pub fn sample_disk(rng: &mut SeededRng) -> [f64; 2] {
    let r = rng.uniform().sqrt();
    let phi = rng.uniform_range(0.0, 2.0 * PI);
    [r * phi.cos(), r * phi.sin()]
}

/// Monte-Carlo estimate of `p[h_{t+1}(x) ≠ h_t(x)]` under the disk distribution.
pub fn disagreement(concept: &ConceptSequence, t: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = SeededRng::new(seed);
    let (now, next) = (concept.at(t), concept.at(t + 1));
    let mut differ = 0usize;
    for _ in 0..samples {
        let p = sample_disk(&mut rng);
        let x = ArrayView1::from(&p);
        if now.label(&x) != next.label(&x) {
            differ += 1;
        }
    }
    differ as f64 / samples.max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TrackingStrategy {
    /// Retrain on the most recent `window` observations.
    SlidingWindow,
    /// Old observations survive each step with probability `keep_fraction`;
    /// the memory is still capped at `window`.
    PartialMemory { keep_fraction: f64 },
    /// Window training with weights `exp(−age/tau)`, age in steps.
    DecayWeighted { tau: f64 },
    /// Sliding window that is emptied whenever the detector fires on the
    /// stream of per-step losses on fresh batches.
    DetectAndReset { detector_window: usize, threshold: f64 },
}

impl TrackingStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            TrackingStrategy::SlidingWindow => "sliding-window",
            TrackingStrategy::PartialMemory { .. } => "partial-memory",
            TrackingStrategy::DecayWeighted { .. } => "decay-weighted",
            TrackingStrategy::DetectAndReset { .. } => "detect-and-reset",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            TrackingStrategy::SlidingWindow => Ok(()),
            TrackingStrategy::PartialMemory { keep_fraction } if (0.0..=1.0).contains(keep_fraction) => Ok(()),
            TrackingStrategy::DecayWeighted { tau } if *tau > 0.0 => Ok(()),
            TrackingStrategy::DetectAndReset {
                detector_window,
                threshold,
            } if *detector_window >= 2 && !threshold.is_nan() => Ok(()),
            other => Err(Error::InvalidParameter(format!(
                "invalid strategy parameters: {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackingConfig {
    /// Memory size `m`, in observations.
    pub window: usize,
    pub steps: usize,
    pub samples_per_step: usize,
    /// Fresh points per step for the true-risk estimate.
    pub eval_samples: usize,
    pub reg: f64,
    /// Optimizer steps per refit, warm-started from the previous model.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            window: 500,
            steps: 200,
            samples_per_step: 100,
            eval_samples: 2000,
            reg: 1e-2,
            max_iter: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrace {
    pub strategy: String,
    pub window: usize,
    /// True risk of the model trained after step `t`, measured against `h_{t+1}`.
    pub risks: Vec<f64>,
    /// Steps at which a detect-and-reset strategy emptied its memory.
    pub detections: Vec<usize>,
}

impl RiskTrace {
    /// Mean over the last `n` steps (all steps if fewer).
    pub fn tail_mean(&self, n: usize) -> f64 {
        let start = self.risks.len().saturating_sub(n);
        let tail = &self.risks[start..];
        if tail.is_empty() {
            return f64::NAN;
        }
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[derive(Debug, Clone, Copy)]
struct Observation {
    x: [f64; 2],
    y: usize,
    step: usize,
}

enum Predictor {
    Softmax(SoftmaxClassifier),
    Constant(usize),
}

impl Predictor {
    fn predict(&self, x: &[f64; 2]) -> usize {
        match self {
            Predictor::Softmax(clf) => clf.predict_proba(&ArrayView1::from(x)).map(|p| p.argmax()).unwrap_or(0),
            Predictor::Constant(c) => *c,
        }
    }

    fn error_rate(&self, batch: &[Observation]) -> f64 {
        let wrong = batch.iter().filter(|o| self.predict(&o.x) != o.y).count();
        wrong as f64 / batch.len().max(1) as f64
    }
}

fn train(
    memory: &VecDeque<Observation>,
    weights: Vec<f64>,
    previous: Option<&Predictor>,
    cfg: &TrackingConfig,
) -> Result<Predictor> {
    let m = memory.len();
    let features = Array2::from_shape_fn((m, 2), |(i, j)| memory[i].x[j]);
    let labels: Vec<usize> = memory.iter().map(|o| o.y).collect();
    let first = labels[0];
    if labels.iter().all(|&y| y == first) {
        return Ok(Predictor::Constant(first));
    }
    let data = LabeledDataset::classification(features, labels, 2)?;
    let init = match previous {
        Some(Predictor::Softmax(clf)) => Some(clf.params().to_owned()),
        _ => None,
    };
    let opts = SoftmaxOptions {
        max_iter: cfg.max_iter,
        standardize: false,
        init,
        ..Default::default()
    };
    let clf = fit_softmax_with(&data, &Array1::from(weights).view(), cfg.reg, &opts)?;
    Ok(Predictor::Softmax(clf))
}

fn draw_batch(concept: &ConceptSequence, step: usize, n: usize, rng: &mut SeededRng) -> Vec<Observation> {
    let concept = concept.at(step);
    (0..n)
        .map(|_| {
            let x = sample_disk(rng);
            let y = concept.label(&ArrayView1::from(&x));
            Observation { x, y, step }
        })
        .collect()
}

/// Runs one tracking simulation. At step `t` a batch labeled by `h_t`
/// arrives, the strategy updates its memory and refits, and the risk
/// against `h_{t+1}` is estimated on a fresh batch.
pub fn simulate_tracking(
    concept: &ConceptSequence,
    strategy: &TrackingStrategy,
    cfg: &TrackingConfig,
) -> Result<RiskTrace> {
    strategy.validate()?;
    if cfg.window == 0 || cfg.samples_per_step == 0 || cfg.eval_samples == 0 {
        return Err(Error::InvalidParameter(
            "window, samples_per_step and eval_samples must be >= 1".into(),
        ));
    }
    if !(cfg.reg > 0.0) {
        return Err(Error::InvalidParameter(format!("reg must be > 0, got {}", cfg.reg)));
    }
    let mut sample_rng = SeededRng::derive(cfg.seed, SAMPLE_STREAM);
    let mut eval_rng = SeededRng::derive(cfg.seed, EVAL_STREAM);
    let mut memory_rng = SeededRng::derive(cfg.seed, MEMORY_STREAM);

    let mut memory: VecDeque<Observation> = VecDeque::new();
    let mut model: Option<Predictor> = None;
    let mut losses: Vec<f64> = Vec::new();
    let mut last_reset = 0usize;
    let mut risks = Vec::with_capacity(cfg.steps);
    let mut detections = Vec::new();

    for t in 0..cfg.steps {
        let batch = draw_batch(concept, t, cfg.samples_per_step, &mut sample_rng);

        if let TrackingStrategy::DetectAndReset {
            detector_window,
            threshold,
        } = strategy
        {
            if let Some(current) = &model {
                losses.push(current.error_rate(&batch));
                let recent = &losses[last_reset..];
                if !drift_detector(recent, *detector_window, *threshold)?.is_empty() {
                    detections.push(t);
                    memory.clear();
                    model = None;
                    last_reset = losses.len();
                }
            }
        }

        if let TrackingStrategy::PartialMemory { keep_fraction } = strategy {
            let keep = *keep_fraction;
            memory.retain(|_| memory_rng.bernoulli(keep));
        }
        memory.extend(batch);
        while memory.len() > cfg.window {
            memory.pop_front();
        }

        let weights: Vec<f64> = match strategy {
            TrackingStrategy::DecayWeighted { tau } => {
                memory.iter().map(|o| (-((t - o.step) as f64) / tau).exp()).collect()
            }
            _ => vec![1.0; memory.len()],
        };
        let fitted = train(&memory, weights, model.as_ref(), cfg)?;
        let eval = draw_batch(concept, t + 1, cfg.eval_samples, &mut eval_rng);
        risks.push(fitted.error_rate(&eval));
        model = Some(fitted);
    }
    Ok(RiskTrace {
        strategy: strategy.name().to_string(),
        window: cfg.window,
        risks,
        detections,
    })
}

/// Two-window mean-shift test. Scanning the stream, an event is emitted at
/// index `i` when the mean of the last `window` losses exceeds the mean of
/// the `window` losses before them by more than `threshold`; the test then
/// restarts and needs `2·window` new values before it can fire again.
pub fn drift_detector(losses: &[f64], window: usize, threshold: f64) -> Result<Vec<usize>> {
    if window < 2 {
        return Err(Error::InvalidParameter(format!(
            "detector window must be >= 2, got {window}"
        )));
    }
    let mut events = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < losses.len() {
        if i + 1 >= start + 2 * window {
            let recent = &losses[i + 1 - window..=i];
            let reference = &losses[i + 1 - 2 * window..i + 1 - window];
            let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
            if mean(recent) - mean(reference) > threshold {
                events.push(i);
                start = i + 1;
            }
        }
        i += 1;
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub kind: ConceptKind,
    pub deltas: Vec<f64>,
    pub windows: Vec<usize>,
    /// `median_risk[i][j]`: median over seeds of the tail-mean risk at
    /// `deltas[i]`, `windows[j]`.
    pub median_risk: Vec<Vec<f64>>,
    /// Per window, how many adjacent Δ pairs have a decreasing median risk.
    pub delta_inversions: Vec<usize>,
    /// Per Δ, how many adjacent window pairs have an increasing median risk.
    pub window_inversions: Vec<usize>,
}

/// Tail-mean risk of one sliding-window run with memory `window` on a
/// concept drawn from `seed`.
pub fn sweep_cell(
    kind: ConceptKind,
    delta: f64,
    window: usize,
    seed: u64,
    base: &TrackingConfig,
    tail: usize,
) -> Result<f64> {
    let concept = make_concept(kind, delta, seed)?;
    let cfg = TrackingConfig {
        window,
        seed,
        ..base.clone()
    };
    let trace = simulate_tracking(&concept, &TrackingStrategy::SlidingWindow, &cfg)?;
    Ok(trace.tail_mean(tail))
}

/// Median tail risk of the sliding-window strategy over a Δ × m grid. Each
/// seed's tail mean covers the last `tail` steps.
pub fn tradeoff_sweep(
    kind: ConceptKind,
    deltas: &[f64],
    windows: &[usize],
    seeds: &[u64],
    base: &TrackingConfig,
    tail: usize,
) -> Result<SweepTable> {
    if deltas.is_empty() || windows.is_empty() || seeds.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut table = vec![vec![0.0; windows.len()]; deltas.len()];
    for (i, &delta) in deltas.iter().enumerate() {
        for (j, &window) in windows.iter().enumerate() {
            let mut tails = seeds
                .iter()
                .map(|&seed| sweep_cell(kind, delta, window, seed, base, tail))
                .collect::<Result<Vec<_>>>()?;
            table[i][j] = median(&mut tails);
        }
    }
    let delta_inversions = (0..windows.len())
        .map(|j| (1..deltas.len()).filter(|&i| table[i][j] < table[i - 1][j]).count())
        .collect();
    let window_inversions = table
        .iter()
        .map(|row| row.windows(2).filter(|w| w[1] > w[0]).count())
        .collect();
    Ok(SweepTable {
        kind,
        deltas: deltas.to_vec(),
        windows: windows.to_vec(),
        median_risk: table,
        delta_inversions,
        window_inversions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_drift_is_constant() {
        for kind in [ConceptKind::RotatingHalfspace, ConceptKind::ShiftingThreshold] {
            let c = make_concept(kind, 0.0, 1).unwrap();
            let mut rng = SeededRng::new(2);
            for _ in 0..200 {
                let p = sample_disk(&mut rng);
                let x = ArrayView1::from(&p);
                assert_eq!(c.label(0, &x), c.label(37, &x));
            }
        }
    }

    #[test]
    fn rotation_disagreement_matches_delta() {
        let c = make_concept(ConceptKind::RotatingHalfspace, 0.1, 3).unwrap();
        let d = disagreement(&c, 5, 100_000, 4);
        assert!((d - 0.1).abs() < 0.01, "{d}");
    }

    #[test]
    fn threshold_disagreement_bounded_by_delta() {
        let c = make_concept(ConceptKind::ShiftingThreshold, 0.05, 3).unwrap();
        for t in 0..40 {
            assert!(disagreement(&c, t, 20_000, t as u64) <= 0.05 + 0.01);
        }
    }

    #[test]
    fn abrupt_switch_changes_once() {
        let c = make_concept(ConceptKind::AbruptSwitch, 0.0, 5).unwrap();
        for t in 0..100 {
            let d = disagreement(&c, t, 2000, 6);
            if t + 1 == DEFAULT_SWITCH_STEP {
                assert_eq!(d, 1.0);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_drift() {
        assert!(make_concept(ConceptKind::RotatingHalfspace, 1.5, 0).is_err());
        assert!("spiral".parse::<ConceptKind>().is_err());
        assert_eq!(
            "abrupt-switch".parse::<ConceptKind>().unwrap(),
            ConceptKind::AbruptSwitch
        );
    }

    #[test]
    fn disk_quantile_inverts_cdf() {
        for q in [0.1, 0.25, 0.5, 0.9] {
            assert!((disk_marginal_cdf(disk_marginal_quantile(q)) - q).abs() < 1e-12);
        }
        assert!((disk_marginal_quantile(0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_gives_empty_trace() {
        let c = make_concept(ConceptKind::RotatingHalfspace, 0.1, 0).unwrap();
        let cfg = TrackingConfig {
            steps: 0,
            ..Default::default()
        };
        let trace = simulate_tracking(&c, &TrackingStrategy::SlidingWindow, &cfg).unwrap();
        assert!(trace.risks.is_empty());
    }

    #[test]
    fn detector_examples() {
        assert!(drift_detector(&[0.2; 100], 5, 0.1).unwrap().is_empty());
        let mut step = vec![0.1; 40];
        step.extend(vec![0.5; 60]);
        let events = drift_detector(&step, 5, 0.2).unwrap();
        assert_eq!(events.len(), 1);
        assert!(events[0] >= 40 && events[0] < 40 + 10);
        assert!(drift_detector(&step, 5, f64::INFINITY).unwrap().is_empty());
        assert!(drift_detector(&step, 1, 0.2).is_err());
    }

    #[test]
    fn tail_mean_window() {
        let trace = RiskTrace {
            strategy: "x".into(),
            window: 1,
            risks: vec![1.0, 0.0, 0.5, 0.5],
            detections: vec![],
        };
        assert_eq!(trace.tail_mean(2), 0.5);
        assert_eq!(trace.tail_mean(10), 0.5);
    }
}
