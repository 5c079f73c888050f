use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::drift::{ConceptKind, TrackingConfig};
use crate::jdot::JdotConfig;
use crate::synth::{IndividualBias, SubspaceMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    PriorShift,
    CovariateShift,
    Jdot,
    Drift,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::PriorShift => "prior-shift",
            Scenario::CovariateShift => "covariate-shift",
            Scenario::Jdot => "jdot",
            Scenario::Drift => "drift",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Generated from the scenario's own synthetic parameters.
    #[default]
    Synthetic,
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

/// Gaussian classes with diagonal covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureParams {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorShiftParams {
    pub mixture: MixtureParams,
    /// Synthetic target sample per split. CSV runs instead hold out the
    /// largest subset of the remaining rows with the target proportions.
    pub target_size: usize,
    pub train_per_class: usize,
    pub target_priors: Vec<f64>,
    pub splits: usize,
    pub trainings: usize,
    pub softmax_reg: f64,
    pub em_tol: f64,
    pub em_max_iter: usize,
    pub alpha: f64,
}

impl Default for PriorShiftParams {
    fn default() -> Self {
        Self {
            mixture: MixtureParams {
                means: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
                variances: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            },
            target_size: 1000,
            train_per_class: 100,
            target_priors: vec![0.2, 0.8],
            splits: 10,
            trainings: 10,
            softmax_reg: 1e-3,
            em_tol: 1e-6,
            em_max_iter: 1000,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BiasParams {
    /// Training rows kept with probability `exp(−gamma‖x − x̄‖²)`.
    Joint { gamma: f64 },
    /// Test rows subsampled on one feature at a time; `columns = None` loops
    /// over every feature.
    Individual {
        threshold: f64,
        p_low: f64,
        p_high: f64,
        columns: Option<Vec<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovariateShiftParams {
    pub mixture: MixtureParams,
    pub class_priors: Vec<f64>,
    pub pool_size: usize,
    pub test_fraction: f64,
    pub bias: BiasParams,
    /// Softmax L2 strengths, strongest first.
    pub regs: Vec<f64>,
    pub kmm_bound: f64,
    /// Gaussian kernel width; the median heuristic when unset.
    pub kernel_bandwidth: Option<f64>,
    pub standardize: bool,
}

impl Default for CovariateShiftParams {
    fn default() -> Self {
        Self {
            mixture: MixtureParams {
                means: vec![vec![0.0, 0.0], vec![4.0, 0.0]],
                variances: vec![vec![2.0, 2.0], vec![8.0, 8.0]],
            },
            class_priors: vec![0.7, 0.3],
            pool_size: 800,
            test_fraction: 0.5,
            bias: BiasParams::Joint { gamma: 1.0 / 20.0 },
            regs: vec![1.0, 0.3, 0.1, 1e-2, 1e-3],
            kmm_bound: 1000.0,
            kernel_bandwidth: None,
            standardize: false,
        }
    }
}

impl CovariateShiftParams {
    pub fn individual_bias(&self, column: usize) -> Option<IndividualBias> {
        match &self.bias {
            BiasParams::Individual {
                threshold,
                p_low,
                p_high,
                ..
            } => Some(IndividualBias {
                column,
                threshold: *threshold,
                p_low: *p_low,
                p_high: *p_high,
            }),
            BiasParams::Joint { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JdotParams {
    pub samples: usize,
    pub slope: f64,
    pub intercept: f64,
    pub noise: f64,
    pub shift: f64,
    /// Distortion applied to CSV features; a translation by `shift` when unset.
    pub map: Option<SubspaceMap>,
    pub solver: JdotConfig,
}

impl Default for JdotParams {
    fn default() -> Self {
        Self {
            samples: 200,
            slope: 2.0,
            intercept: 0.0,
            noise: 0.1,
            shift: 1.0,
            map: None,
            solver: JdotConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriftParams {
    pub concept: ConceptKind,
    pub deltas: Vec<f64>,
    pub windows: Vec<usize>,
    pub steps: usize,
    pub samples_per_step: usize,
    pub eval_samples: usize,
    pub reg: f64,
    pub max_iter: usize,
    /// Risks are averaged over this many final steps.
    pub tail: usize,
}

impl Default for DriftParams {
    fn default() -> Self {
        let base = TrackingConfig::default();
        Self {
            concept: ConceptKind::RotatingHalfspace,
            deltas: vec![0.0, 0.01, 0.05, 0.1, 0.2],
            windows: vec![100, 500, 2000],
            steps: 150,
            samples_per_step: base.samples_per_step,
            eval_samples: base.eval_samples,
            reg: base.reg,
            max_iter: base.max_iter,
            tail: 50,
        }
    }
}

impl DriftParams {
    pub fn tracking(&self) -> TrackingConfig {
        TrackingConfig {
            steps: self.steps,
            samples_per_step: self.samples_per_step,
            eval_samples: self.eval_samples,
            reg: self.reg,
            max_iter: self.max_iter,
            ..TrackingConfig::default()
        }
    }
}

/// Experiment file. Only the section of the chosen scenario is kept after
/// [`ExperimentConfig::resolve`], and it is filled with every default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_shift: Option<PriorShiftParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariate_shift: Option<CovariateShiftParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jdot: Option<JdotParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftParams>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<Scenario>,
    pub seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies overrides, fills the active section with defaults, drops the
    /// other sections and checks what the runners rely on.
    pub fn resolve(mut self, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
        let scenario = overrides
            .scenario
            .or(self.scenario)
            .ok_or_else(|| CliError::Usage("no scenario given".into()))?;
        if let Some(seed) = overrides.seed {
            self.seeds = vec![seed];
        }
        if self.seeds.is_empty() {
            self.seeds = vec![0];
        }
        // Reports list seeds in ascending order whatever order the file used.
        let count = self.seeds.len();
        self.seeds.sort_unstable();
        self.seeds.dedup();
        if self.seeds.len() != count {
            return Err(CliError::Usage("seeds must be distinct".into()));
        }
        let resolved = ExperimentConfig {
            scenario: Some(scenario),
            seeds: self.seeds,
            dataset: self.dataset,
            prior_shift: (scenario == Scenario::PriorShift).then(|| self.prior_shift.unwrap_or_default()),
            covariate_shift: (scenario == Scenario::CovariateShift).then(|| self.covariate_shift.unwrap_or_default()),
            jdot: (scenario == Scenario::Jdot).then(|| self.jdot.unwrap_or_default()),
            drift: (scenario == Scenario::Drift).then(|| self.drift.unwrap_or_default()),
        };
        let resolved = ResolvedConfig {
            scenario,
            inner: resolved,
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

/// A configuration whose scenario is fixed and whose active section is present.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    inner: ExperimentConfig,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_probabilities(values: &[f64], what: &str) -> Result<(), CliError> {
    let sum: f64 = values.iter().sum();
    if values.len() < 2 || values.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > 1e-9 {
        return Err(usage(format!("{what} must be at least two probabilities summing to 1")));
    }
    Ok(())
}

fn check_mixture(mixture: &MixtureParams, classes: usize) -> Result<(), CliError> {
    if mixture.means.len() != classes || mixture.variances.len() != classes {
        return Err(usage(format!("mixture needs {classes} means and variance vectors")));
    }
    Ok(())
}

impl ResolvedConfig {
    pub fn config(&self) -> &ExperimentConfig {
        &self.inner
    }

    pub fn seeds(&self) -> &[u64] {
        &self.inner.seeds
    }

    pub fn dataset(&self) -> &DatasetSource {
        &self.inner.dataset
    }

    pub fn prior_shift(&self) -> &PriorShiftParams {
        self.inner.prior_shift.as_ref().expect("resolved section")
    }

    pub fn covariate_shift(&self) -> &CovariateShiftParams {
        self.inner.covariate_shift.as_ref().expect("resolved section")
    }

    pub fn jdot(&self) -> &JdotParams {
        self.inner.jdot.as_ref().expect("resolved section")
    }

    pub fn drift(&self) -> &DriftParams {
        self.inner.drift.as_ref().expect("resolved section")
    }

    fn validate(&self) -> Result<(), CliError> {
        match self.scenario {
            Scenario::PriorShift => {
                let p = self.prior_shift();
                check_probabilities(&p.target_priors, "target_priors")?;
                check_mixture(&p.mixture, p.target_priors.len())?;
                if p.splits == 0 || p.trainings == 0 || p.train_per_class == 0 {
                    return Err(usage("splits, trainings and train_per_class must be >= 1"));
                }
                if !(p.softmax_reg >= 0.0) || !(0.0..=1.0).contains(&p.alpha) {
                    return Err(usage("softmax_reg must be >= 0 and alpha in [0, 1]"));
                }
            }
            Scenario::CovariateShift => {
                let p = self.covariate_shift();
                check_probabilities(&p.class_priors, "class_priors")?;
                check_mixture(&p.mixture, p.class_priors.len())?;
                if !(p.test_fraction > 0.0 && p.test_fraction < 1.0) {
                    return Err(usage("test_fraction must lie in (0, 1)"));
                }
                if p.regs.is_empty() || p.regs.iter().any(|r| !(*r >= 0.0)) {
                    return Err(usage("regs must be a nonempty list of nonnegative values"));
                }
                if !(p.kmm_bound > 0.0) || p.kernel_bandwidth.is_some_and(|b| !(b > 0.0)) {
                    return Err(usage("kmm_bound and kernel_bandwidth must be positive"));
                }
                match &p.bias {
                    BiasParams::Joint { gamma } if !(*gamma >= 0.0) => return Err(usage("gamma must be >= 0")),
                    BiasParams::Individual { p_low, p_high, .. }
                        if !(0.0..=1.0).contains(p_low) || !(0.0..=1.0).contains(p_high) =>
                    {
                        return Err(usage("p_low and p_high must be probabilities"))
                    }
                    _ => {}
                }
            }
            Scenario::Jdot => {
                let p = self.jdot();
                p.solver.validate().map_err(|e| usage(e.to_string()))?;
                if p.samples < 2 {
                    return Err(usage("jdot needs at least two samples"));
                }
            }
            Scenario::Drift => {
                let p = self.drift();
                if !matches!(self.dataset(), DatasetSource::Synthetic) {
                    return Err(usage("the drift scenario only runs on synthetic concepts"));
                }
                if p.deltas.is_empty() || p.windows.is_empty() {
                    return Err(usage("drift needs nonempty deltas and windows"));
                }
                if p.deltas.iter().any(|d| !(0.0..=1.0).contains(d)) || p.windows.contains(&0) {
                    return Err(usage("deltas must lie in [0, 1] and windows be >= 1"));
                }
                if p.tail == 0 || p.samples_per_step == 0 || p.eval_samples == 0 {
                    return Err(usage("tail, samples_per_step and eval_samples must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolve_fills_only_the_active_section() {
        let cfg = ExperimentConfig::from_toml("scenario = \"jdot\"\nseeds = [3, 1]\n").unwrap();
        let r = cfg.resolve(&Overrides::default()).unwrap();
        assert_eq!(r.scenario, Scenario::Jdot);
        assert_eq!(r.seeds(), &[1, 3]);
        assert_eq!(r.jdot(), &JdotParams::default());
        assert!(r.config().drift.is_none() && r.config().prior_shift.is_none());
    }

    #[test]
    fn overrides_win() {
        let cfg = ExperimentConfig::from_toml("scenario = \"jdot\"\nseeds = [3, 1]\n").unwrap();
        let r = cfg
            .resolve(&Overrides {
                scenario: Some(Scenario::Drift),
                seed: Some(9),
            })
            .unwrap();
        assert_eq!(r.scenario, Scenario::Drift);
        assert_eq!(r.seeds(), &[9]);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("scenario = \"teleport\"").is_err());
        assert!(ExperimentConfig::from_toml("scenario = \"jdot\"\nunknown = 1").is_err());
        let none = ExperimentConfig::default();
        assert!(matches!(none.resolve(&Overrides::default()), Err(CliError::Usage(_))));
        let dup = ExperimentConfig::from_toml("scenario = \"drift\"\nseeds = [1, 1]").unwrap();
        assert!(dup.resolve(&Overrides::default()).is_err());
        let priors =
            ExperimentConfig::from_toml("scenario = \"prior-shift\"\n[prior_shift]\ntarget_priors = [0.5, 0.6]")
                .unwrap();
        assert!(priors.resolve(&Overrides::default()).is_err());
        let csv_drift = ExperimentConfig::from_toml(
            "scenario = \"drift\"\n[dataset]\nsource = \"csv\"\npath = \"x.csv\"\nlabel_column = \"y\"",
        )
        .unwrap();
        assert!(csv_drift.resolve(&Overrides::default()).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::from_toml(
            "scenario = \"covariate-shift\"\n[covariate_shift.bias]\nkind = \"individual\"\nthreshold = 0.5\np_low = 0.2\np_high = 0.8\n",
        )
        .unwrap();
        let r = cfg.resolve(&Overrides::default()).unwrap();
        let text = toml::to_string(r.config()).unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(&back, r.config());
    }
}
