use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::config::{DatasetConfig, ExperimentConfig};
use super::RunError;
use crate::corpus::{load_dataset, split_user_exclusive, DatasetSplit, Record, TaskSpec};
use crate::metrics::{majority_baseline, EvalKey, EvalReport};
use crate::prompt::{default_shots, Mode, PromptEngine, Strategy, VariantKey};

/// A dataset loaded, bound to its task and split.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub task: TaskSpec,
    pub split: DatasetSplit,
}

fn load(d: &DatasetConfig, path: &std::path::Path, task: &TaskSpec) -> Result<Vec<Record>, RunError> {
    let report = load_dataset(path, &d.schema, task)?;
    for e in report.errors.iter().take(20) {
        log::warn!("{}: row {}: {}", path.display(), e.row, e.message);
    }
    if report.errors.len() > 20 {
        log::warn!("{}: {} more row errors", path.display(), report.errors.len() - 20);
    }
    Ok(report.records)
}

pub fn prepare_dataset(config: &ExperimentConfig, d: &DatasetConfig) -> Result<PreparedDataset, RunError> {
    let task = d.resolve_task()?;
    let split = match (&d.path, &d.train_path, &d.test_path) {
        (Some(path), _, _) => {
            let records = load(d, path, &task)?;
            split_user_exclusive(&records, config.split_ratio, config.split_seed)?
        }
        (None, Some(train), Some(test)) => {
            let train = load(d, train, &task)?;
            let test = load(d, test, &task)?;
            let train_users: HashSet<&str> = train.iter().map(|r| r.user_id.as_str()).collect();
            let shared = test.iter().filter(|r| train_users.contains(r.user_id.as_str())).count();
            if shared > 0 {
                log::warn!("dataset {}: {shared} test record(s) share a user with the train file", d.name);
            }
            DatasetSplit {
                train,
                test,
                seed: config.split_seed,
                ratio: f64::NAN,
            }
        }
        _ => unreachable!("validated config"),
    };
    if split.test.is_empty() {
        return Err(RunError::Config(format!("dataset {} has no test records", d.name)));
    }
    Ok(PreparedDataset {
        name: d.name.clone(),
        task,
        split,
    })
}

pub fn prepare_datasets(config: &ExperimentConfig) -> Result<Vec<PreparedDataset>, RunError> {
    config.datasets.iter().map(|d| prepare_dataset(config, d)).collect()
}

/// Repeats per mode.
pub fn repeats_for(config: &ExperimentConfig, mode: Mode) -> usize {
    match mode {
        Mode::FewShot => config.few_shot.repeats,
        Mode::ZeroShot => config.zero_shot_repeats,
        Mode::Cot | Mode::Baseline => 1,
    }
}

pub fn shots_for(config: &ExperimentConfig, task: &TaskSpec) -> usize {
    config
        .few_shot
        .m_overrides
        .get(task.task_id.as_str())
        .copied()
        .unwrap_or_else(|| default_shots(task))
}

/// One scored inference to perform. Indices point into the prepared
/// datasets, the config's models and the dataset's test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub dataset: usize,
    pub model: usize,
    pub mode: Mode,
    pub strategy: Strategy,
    pub variant: VariantKey,
    pub repeat: usize,
    pub record: usize,
}

/// Every cell of the experiment matrix, in a fixed order.
pub fn enumerate_cells(config: &ExperimentConfig, datasets: &[PreparedDataset], engine: &PromptEngine) -> Vec<Cell> {
    let mut cells = Vec::new();
    for model in 0..config.models.len() {
        for (di, d) in datasets.iter().enumerate() {
            for &mode in &config.modes {
                for &strategy in &config.strategies {
                    for variant in engine.enumerate_variants(&d.task, strategy) {
                        for repeat in 0..repeats_for(config, mode) {
                            for record in 0..d.split.test.len() {
                                cells.push(Cell {
                                    dataset: di,
                                    model,
                                    mode,
                                    strategy,
                                    variant,
                                    repeat,
                                    record,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanDataset {
    pub name: String,
    pub task: TaskSpec,
    pub train: usize,
    pub test: usize,
    pub majority: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanGroup {
    pub key: EvalKey,
    pub variants: usize,
    pub repeats: usize,
    pub expected: usize,
}

/// Contents of `plan.json`: what a complete run contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub config_digest: String,
    pub datasets: Vec<PlanDataset>,
    pub groups: Vec<PlanGroup>,
    pub total_cells: usize,
}

impl RunPlan {
    pub fn build(
        config: &ExperimentConfig,
        datasets: &[PreparedDataset],
        engine: &PromptEngine,
        config_digest: &str,
    ) -> RunPlan {
        let plan_datasets = datasets
            .iter()
            .map(|d| {
                let train: Vec<_> = d.split.train.iter().map(|r| r.label.clone()).collect();
                let test: Vec<_> = d.split.test.iter().map(|r| r.label.clone()).collect();
                let majority = match majority_baseline(&train, &test, &d.task, &d.name) {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("dataset {}: no majority baseline: {e}", d.name);
                        None
                    }
                };
                PlanDataset {
                    name: d.name.clone(),
                    task: d.task.clone(),
                    train: d.split.train.len(),
                    test: d.split.test.len(),
                    majority,
                }
            })
            .collect();
        let mut groups = BTreeMap::new();
        for m in &config.models {
            for d in datasets {
                for &mode in &config.modes {
                    for &strategy in &config.strategies {
                        let variants = engine.enumerate_variants(&d.task, strategy).len();
                        let repeats = repeats_for(config, mode);
                        let key = EvalKey {
                            dataset: d.name.clone(),
                            task: d.task.task_id.clone(),
                            model: m.name.clone(),
                            mode,
                            strategy: Some(strategy),
                        };
                        groups.insert(
                            key.clone(),
                            PlanGroup {
                                key,
                                variants,
                                repeats,
                                expected: variants * repeats * d.split.test.len(),
                            },
                        );
                    }
                }
            }
        }
        let groups: Vec<PlanGroup> = groups.into_values().collect();
        RunPlan {
            config_digest: config_digest.to_string(),
            datasets: plan_datasets,
            total_cells: groups.iter().map(|g| g.expected).sum(),
            groups,
        }
    }

    pub fn expected(&self, key: &EvalKey) -> Option<usize> {
        self.groups.iter().find(|g| &g.key == key).map(|g| g.expected)
    }

    pub fn task(&self, dataset: &str) -> Option<&TaskSpec> {
        self.datasets.iter().find(|d| d.name == dataset).map(|d| &d.task)
    }
}
