use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specdiff::harness::{sha256_hex, CompareConfig, SyntheticConfig, TrainConfig};
use specdiff::model::{MissingPattern, ModelConfig};
use specdiff::sde::SdeStepPlan;

use crate::CliError;

/// Everything a run depends on. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub paths: PathsConfig,
    pub data: SyntheticConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub recover: RecoverConfig,
    pub compare: CompareConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            paths: PathsConfig::default(),
            data: SyntheticConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            recover: RecoverConfig::default(),
            compare: CompareConfig::default(),
        }
    }
}

/// Input locations; unset entries resolve under `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub patterns: Vec<MissingPattern>,
    /// Random missing rates; empty skips the rate sweep.
    pub rates: Vec<f64>,
    pub plan: SdeStepPlan,
    /// Also report the mean-imputation baseline.
    pub mean_imputation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            patterns: MissingPattern::all_fixed().to_vec(),
            rates: Vec::new(),
            plan: SdeStepPlan { num_steps: 200, corrector_steps: 0, corrector_snr: 0.16 },
            mean_imputation: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoverConfig {
    pub pattern: MissingPattern,
    /// Number of test samples to recover; all when unset.
    pub limit: Option<usize>,
}

impl Default for RecoverConfig {
    fn default() -> Self {
        Self { pattern: "{t}".parse().expect("valid pattern"), limit: None }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub beta: Option<f64>,
    pub missing_rate: Option<f64>,
    pub pattern: Option<MissingPattern>,
    pub steps: Option<u64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config: {}", e.message().trim_end())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies overrides. A missing rate or pattern narrows evaluation to
    /// that single setting.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        if let Some(beta) = o.beta {
            self.model.beta = beta;
        }
        if let Some(steps) = o.steps {
            self.train.steps = steps;
        }
        match (o.pattern, o.missing_rate) {
            (Some(p), rate) => {
                self.eval.patterns = vec![p];
                self.eval.rates = rate.into_iter().collect();
                self.recover.pattern = p;
            }
            (None, Some(rate)) => {
                self.eval.patterns = Vec::new();
                self.eval.rates = vec![rate];
            }
            (None, None) => {}
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: specdiff::Error| CliError::Config(e.to_string());
        self.data.validate().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)?;
        self.eval.plan.validate().map_err(cfg)?;
        if self.model.dims != self.data.dims {
            return Err(CliError::Config(format!(
                "model.dims {:?} does not match data.dims {:?}",
                self.model.dims, self.data.dims
            )));
        }
        if let Some(r) = self.eval.rates.iter().find(|r| !(0.0..=specdiff::harness::MAX_RATE).contains(*r)) {
            return Err(CliError::Config(format!("missing rate {r} outside [0, {}]", specdiff::harness::MAX_RATE)));
        }
        if self.eval.patterns.is_empty() && self.eval.rates.is_empty() {
            return Err(CliError::Config("eval needs at least one pattern or rate".into()));
        }
        if self.recover.limit == Some(0) {
            return Err(CliError::Config("recover.limit must be positive".into()));
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn snapshot(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(format!("cannot serialize config: {e}")))
    }

    pub fn hash(&self) -> Result<String, CliError> {
        Ok(sha256_hex(self.snapshot()?.as_bytes()))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.paths.dataset.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths.checkpoint.clone().unwrap_or_else(|| self.out.join("train").join("checkpoint.sdck"))
    }
}
