//! Experiment orchestration.
//!
//! A config names datasets, models, modes and strategies. The runner expands
//! them into cells (one per test record, variant and repeat), fans the cells
//! out to a bounded worker pool, and appends one [`RunRecord`] per cell to
//! `records.jsonl` through a single writer. Responses go through the
//! on-disk cache, so an interrupted run resumes without repeating requests.
//! Reports are recomputed from the records file alone.

mod config;
mod plan;
mod report;
mod run;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{load_config, ConfigError, DatasetConfig, ExperimentConfig, FewShotConfig, FinetuneConfig};
pub use plan::{
    enumerate_cells, prepare_dataset, prepare_datasets, repeats_for, shots_for, Cell, PlanDataset, PlanGroup,
    PreparedDataset, RunPlan,
};
pub use report::{read_records, render_report, write_report, RenderedReport};
pub use run::{draw_exemplars, export_finetune, run_dir_for, run_experiment, RunOptions, RunOutcome};

use crate::corpus::{CorpusError, TaskId};
use crate::finetune::FinetuneError;
use crate::parsing::ParseRule;
use crate::prompt::{Mode, Strategy, VariantKey};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const PLAN_FILE: &str = "plan.json";
pub const PARTIAL_MARKER: &str = "PARTIAL";
pub const CACHE_DIR: &str = "cache";
pub const REPORT_DIR: &str = "report";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("backend setup: {0}")]
    Backend(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Finetune(#[from] FinetuneError),
}

impl RunError {
    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
        move |source| RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Whether the error stems from the configuration or its inputs.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RunError::ConfigFile(_) | RunError::Config(_) | RunError::Corpus(_) | RunError::Backend(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Parsed,
    Unparseable,
    Ambiguous,
    /// No prompt could be built, e.g. few-shot over budget. Scored as unparseable.
    PromptError,
    /// The backend failed. Not scored; retried on resume.
    BackendError,
}

impl RecordStatus {
    pub fn is_scored(self) -> bool {
        self != RecordStatus::BackendError
    }
}

/// One line of `records.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub record_id: String,
    pub dataset: String,
    pub task: TaskId,
    pub model: String,
    pub mode: Mode,
    pub strategy: Strategy,
    pub variant: VariantKey,
    pub repeat_index: usize,
    pub prompt_fingerprint: Option<String>,
    pub raw_response: Option<String>,
    /// Predicted class name; absent unless parsed.
    pub pred: Option<String>,
    pub status: RecordStatus,
    pub rule: Option<ParseRule>,
    pub matched_span: String,
    pub gold: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplars: Vec<String>,
    pub error: Option<String>,
}

/// Identity of a cell; at most one scored record exists per key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub dataset: String,
    pub record_id: String,
    pub model: String,
    pub mode: Mode,
    pub strategy: Strategy,
    pub variant: VariantKey,
    pub repeat: usize,
}

impl RunRecord {
    pub fn cell_key(&self) -> CellKey {
        CellKey {
            dataset: self.dataset.clone(),
            record_id: self.record_id.clone(),
            model: self.model.clone(),
            mode: self.mode,
            strategy: self.strategy,
            variant: self.variant,
            repeat: self.repeat_index,
        }
    }
}

/// Derives a 64-bit seed from labeled parts.
pub(crate) fn mix_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0x1f]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}
