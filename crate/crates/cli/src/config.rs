//! Experiment configuration file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use tda_core::attribution::UnlearnConfig;
use tda_core::baselines::{BaselineMethod, GradientOptions, HifConfig};
use tda_core::data::SuiteKind;
use tda_core::model::ModelConfig;
use tda_core::optim::OptimizerFamily;
use tda_core::partition::BatchSize;
use tda_core::stats::Metric;
use tda_core::training::{RemovalMode, TrainConfig};

use crate::error::{CliError, CliResult};

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_ROOT_VAR: &str = "TDA_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Untrac,
    UntracInv,
    Baseline(BaselineMethod),
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Untrac,
        Method::UntracInv,
        Method::Baseline(BaselineMethod::GradDot),
        Method::Baseline(BaselineMethod::GradCos),
        Method::Baseline(BaselineMethod::TracIn),
        Method::Baseline(BaselineMethod::HifLissa),
        Method::Baseline(BaselineMethod::HifArnoldi),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Untrac => "untrac",
            Method::UntracInv => "untrac-inv",
            Method::Baseline(b) => b.name(),
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;
    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method `{s}`; valid methods: {}", Self::valid_names())))
    }
}

impl TryFrom<String> for Method {
    type Error = CliError;
    fn try_from(s: String) -> CliResult<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteChoice {
    A,
    B,
    /// Four datasets of one content distribution with unequal sizes.
    Size,
    /// Datasets read from `data.paths`.
    Files,
}

impl SuiteChoice {
    pub fn kind(self) -> Option<SuiteKind> {
        match self {
            SuiteChoice::A => Some(SuiteKind::A),
            SuiteChoice::B => Some(SuiteKind::B),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub dir: PathBuf,
    pub train: Vec<String>,
    pub test: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub suite: SuiteChoice,
    pub n_per_dataset: usize,
    /// Relative dataset sizes for the `size` suite.
    pub size_weights: Vec<f64>,
    /// Total training examples for the `size` suite.
    pub size_total: usize,
    pub paths: Option<DataPaths>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            suite: SuiteChoice::A,
            n_per_dataset: 256,
            size_weights: vec![0.5, 0.25, 0.15, 0.1],
            size_total: 1024,
            paths: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnlearnSection {
    pub untrac: UnlearnConfig,
    pub untrac_inv: UnlearnConfig,
}

impl Default for UnlearnSection {
    fn default() -> Self {
        UnlearnSection { untrac: UnlearnConfig::untrac_default(), untrac_inv: UnlearnConfig::inv_default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub gradient: GradientOptions,
    pub hif: HifConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundTruthConfig {
    pub enabled: bool,
    /// The first mode is the one methods are evaluated against.
    pub modes: Vec<RemovalMode>,
    pub eval_batch_size: BatchSize,
    /// Keep counterfactual parameter files.
    pub save_checkpoints: bool,
}

impl Default for GroundTruthConfig {
    fn default() -> Self {
        GroundTruthConfig {
            enabled: true,
            modes: vec![RemovalMode::FixedSteps],
            eval_batch_size: BatchSize::Fixed(1),
            save_checkpoints: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub metrics: Vec<Metric>,
    /// Number of seeded contiguous splits of the test set.
    pub subsets: usize,
    pub split_seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { metrics: vec![Metric::Pearson, Metric::Spearman], subsets: 1, split_seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub methods: Vec<Method>,
    pub optimizers: Vec<OptimizerFamily>,
    pub learning_rates: Vec<f64>,
    /// Fixed optimizer of the learning-rate grid.
    pub base_optimizer: OptimizerFamily,
    /// Fixed learning rate of the optimizer grid.
    pub base_learning_rate: f64,
    pub batch_sizes: Vec<BatchSize>,
    /// Unlearning epochs of the batch-size trajectories.
    pub epochs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            methods: vec![Method::Untrac, Method::UntracInv],
            optimizers: OptimizerFamily::ALL.to_vec(),
            learning_rates: vec![5e-6, 1e-5, 5e-5, 1e-4, 5e-4],
            base_optimizer: OptimizerFamily::Adam,
            base_learning_rate: 5e-5,
            batch_sizes: vec![BatchSize::Fixed(1), BatchSize::Full],
            epochs: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    /// One run per seed.
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub unlearn: UnlearnSection,
    pub baselines: BaselineSection,
    pub methods: Vec<Method>,
    pub ground_truth: GroundTruthConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output_dir: PathBuf::from("runs"),
            seeds: vec![0],
            model: ModelConfig::default(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            unlearn: UnlearnSection::default(),
            baselines: BaselineSection::default(),
            methods: Method::ALL.to_vec(),
            ground_truth: GroundTruthConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(p) = cfg.data.paths.as_mut() {
            if p.dir.is_relative() {
                if let Some(base) = path.parent() {
                    p.dir = base.join(&p.dir);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> CliResult<()> {
        let usage = |m: String| Err(CliError::Usage(m));
        if self.seeds.is_empty() {
            return usage("seeds must list at least one seed".into());
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return usage("seeds must be distinct".into());
        }
        self.model.validate()?;
        self.train.validate()?;
        self.unlearn.untrac.validate()?;
        self.unlearn.untrac_inv.validate()?;
        if self.eval.subsets == 0 {
            return usage("eval.subsets must be at least 1".into());
        }
        if self.ground_truth.modes.is_empty() {
            return usage("ground_truth.modes must list at least one mode".into());
        }
        match (self.data.suite, &self.data.paths) {
            (SuiteChoice::Files, None) => return usage("data.suite = \"files\" needs a [data.paths] table".into()),
            (SuiteChoice::Files, Some(p)) => {
                if !p.dir.is_dir() {
                    return Err(CliError::MissingDependency {
                        stage: "data".into(),
                        detail: format!("data directory {} does not exist", p.dir.display()),
                    });
                }
            }
            (SuiteChoice::Size, _) if self.data.size_weights.len() < 2 => {
                return usage("data.size_weights needs at least two entries".into())
            }
            _ if self.data.n_per_dataset == 0 => return usage("data.n_per_dataset must be at least 1".into()),
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The run directory: output root (or its override) joined with a short hash.
    pub fn run_dir(&self) -> PathBuf {
        let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone());
        root.join(&self.hash()[..16])
    }

    pub fn model_for(&self, seed: u64) -> ModelConfig {
        ModelConfig { seed, ..self.model.clone() }
    }

    pub fn train_for(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train.clone() }
    }

    pub fn primary_mode(&self) -> RemovalMode {
        self.ground_truth.modes[0]
    }
}
