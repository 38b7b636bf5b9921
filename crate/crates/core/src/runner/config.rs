use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{MockSpec, ModelConfig};
use crate::corpus::{Schema, TaskId, TaskSpec};
use crate::finetune::VariantPolicy;
use crate::prompt::{Mode, Strategy, DEFAULT_TOKEN_BUDGET};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: dataset {dataset}: file not found: {path}")]
    MissingFile { dataset: String, path: PathBuf },
}

fn default_repeats() -> usize {
    3
}
fn default_one() -> usize {
    1
}
fn default_concurrency() -> usize {
    4
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_ratio() -> f64 {
    0.8
}
fn default_budget() -> usize {
    DEFAULT_TOKEN_BUDGET
}
fn default_modes() -> Vec<Mode> {
    vec![Mode::ZeroShot]
}
fn default_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}
fn default_failures() -> usize {
    20
}
fn default_resamples() -> usize {
    10
}
fn default_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Single file, split user-exclusively by the runner.
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Pre-split files; used together instead of `path`.
    #[serde(default)]
    pub train_path: Option<PathBuf>,
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub schema: Schema,
    /// Built-in task, `1` to `6`.
    #[serde(default)]
    pub task: Option<TaskId>,
    /// Inline task definition for datasets outside the built-in six.
    #[serde(default)]
    pub task_spec: Option<TaskSpec>,
}

impl DatasetConfig {
    pub fn resolve_task(&self) -> Result<TaskSpec, ConfigError> {
        let bad = |m: String| ConfigError::Invalid(format!("dataset {}: {m}", self.name));
        match (&self.task, &self.task_spec) {
            (Some(id), None) => TaskSpec::builtin_by_id(id).ok_or_else(|| bad(format!("unknown built-in task {id:?}"))),
            (None, Some(spec)) => {
                spec.validate().map_err(|e| bad(e.to_string()))?;
                Ok(spec.clone())
            }
            (Some(_), Some(_)) => Err(bad("set either task or task_spec, not both".into())),
            (None, None) => Err(bad("missing task".into())),
        }
    }

    /// Every file the dataset reads.
    pub fn files(&self) -> Vec<&Path> {
        [&self.path, &self.train_path, &self.test_path]
            .into_iter()
            .flatten()
            .map(PathBuf::as_path)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewShotConfig {
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
    /// Exemplar count per task id; defaults to one per class.
    #[serde(default)]
    pub m_overrides: BTreeMap<String, usize>,
    /// Exemplar draws tried before a cell is recorded as over budget.
    #[serde(default = "default_resamples")]
    pub max_resamples: usize,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig {
            repeats: default_repeats(),
            seed: 0,
            m_overrides: BTreeMap::new(),
            max_resamples: default_resamples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneConfig {
    /// Dataset names to include; all datasets when empty.
    #[serde(default)]
    pub datasets: Vec<String>,
    #[serde(default = "default_fraction")]
    pub fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub policy: VariantPolicy,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            datasets: Vec::new(),
            fraction: default_fraction(),
            seed: 0,
            policy: VariantPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetConfig>,
    pub models: Vec<ModelConfig>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default)]
    pub few_shot: FewShotConfig,
    #[serde(default = "default_one")]
    pub zero_shot_repeats: usize,
    /// Maximum requests in flight.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_budget")]
    pub token_budget: usize,
    /// Strategy catalog; the built-in one when absent.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    /// Consecutive backend failures after which a model lane stops.
    #[serde(default = "default_failures")]
    pub max_consecutive_failures: usize,
    #[serde(default)]
    pub finetune: Option<FinetuneConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.datasets {
            for p in [&mut d.path, &mut d.train_path, &mut d.test_path].into_iter().flatten() {
                resolve(base, p);
            }
        }
        for m in &mut self.models {
            if let Some(p) = &mut m.mock {
                resolve(base, p);
            }
        }
        if let Some(p) = &mut self.catalog {
            resolve(base, p);
        }
        resolve(base, &mut self.output_dir);
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.datasets.is_empty() {
            return invalid("no datasets".into());
        }
        if self.models.is_empty() {
            return invalid("no models".into());
        }
        if self.modes.is_empty() {
            return invalid("no modes".into());
        }
        if self.modes.contains(&Mode::Baseline) {
            return invalid("baseline is not a prompting mode; the majority baseline is always reported".into());
        }
        if self.strategies.is_empty() {
            return invalid("no strategies".into());
        }
        if self.concurrency == 0 {
            return invalid("concurrency must be >= 1".into());
        }
        if self.few_shot.repeats == 0 || self.zero_shot_repeats == 0 {
            return invalid("repeats must be >= 1".into());
        }
        if self.few_shot.max_resamples == 0 {
            return invalid("few_shot.max_resamples must be >= 1".into());
        }
        if self.max_consecutive_failures == 0 {
            return invalid("max_consecutive_failures must be >= 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return invalid(format!("split_ratio must be in (0, 1), got {}", self.split_ratio));
        }
        let mut names = BTreeSet::new();
        for d in &self.datasets {
            if !names.insert(d.name.as_str()) {
                return invalid(format!("duplicate dataset name {:?}", d.name));
            }
            d.resolve_task()?;
            match (&d.path, &d.train_path, &d.test_path) {
                (Some(_), None, None) | (None, Some(_), Some(_)) => {}
                _ => return invalid(format!("dataset {}: set path, or both train_path and test_path", d.name)),
            }
            for f in d.files() {
                if !f.is_file() {
                    return Err(ConfigError::MissingFile {
                        dataset: d.name.clone(),
                        path: f.to_path_buf(),
                    });
                }
            }
        }
        let mut models = BTreeSet::new();
        for m in &self.models {
            if !models.insert(m.name.as_str()) {
                return invalid(format!("duplicate model name {:?}", m.name));
            }
            if m.name.trim().is_empty() {
                return invalid("model name is empty".into());
            }
        }
        for task in self.few_shot.m_overrides.keys() {
            if !self.datasets.iter().any(|d| d.resolve_task().is_ok_and(|t| t.task_id.as_str() == task)) {
                return invalid(format!("few_shot.m_overrides names task {task:?}, which no dataset uses"));
            }
        }
        if let Some(ft) = &self.finetune {
            if !(ft.fraction > 0.0 && ft.fraction <= 1.0) {
                return invalid(format!("finetune.fraction must be in (0, 1], got {}", ft.fraction));
            }
            for name in &ft.datasets {
                if !names.contains(name.as_str()) {
                    return invalid(format!("finetune names unknown dataset {name:?}"));
                }
            }
        }
        Ok(())
    }

    /// Content digest of everything that determines run results: the config
    /// minus concurrency and output location, the data files, the catalog and
    /// any mock override. Runs with equal digests share a run directory.
    pub fn digest(&self, mock_override: Option<&MockSpec>) -> Result<String, ConfigError> {
        let mut canonical = self.clone();
        canonical.concurrency = 0;
        canonical.output_dir = PathBuf::new();
        canonical.finetune = None;
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&canonical).expect("config serializes"));
        let mut files: Vec<&Path> = self.datasets.iter().flat_map(|d| d.files()).collect();
        files.extend(self.catalog.as_deref());
        files.extend(self.models.iter().filter_map(|m| m.mock.as_deref()));
        for f in files {
            let bytes = std::fs::read(f).map_err(|source| ConfigError::Io {
                path: f.to_path_buf(),
                source,
            })?;
            hasher.update(Sha256::digest(&bytes));
        }
        if let Some(spec) = mock_override {
            hasher.update(serde_json::to_vec(spec).expect("mock spec serializes"));
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Reads, resolves and validates a config file. Unknown keys are errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config = ExperimentConfig::from_toml(&text, path)?;
    config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    config.validate()?;
    Ok(config)
}
