//! Labeled datasets: ingestion, user-exclusive splitting, downsampling and
//! summary statistics.
//!
//! Every operation here is a pure function of its input and seed.

mod load;
mod split;
mod stats;
mod task;
pub mod tokens;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use load::{load_dataset, DataFormat, LoadReport, RowError, Schema};
pub use split::{
    downsample_train, read_split_manifest, split_user_exclusive, write_split_manifest, DatasetSplit,
    SplitManifestEntry, SplitSide,
};
pub use stats::{dataset_stats, ClassShare, DatasetStats};
pub use task::{normalize_label, Arity, Category, ClassLabel, Granularity, TaskId, TaskSpec};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("dataset file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid task {task}: {message}")]
    InvalidTask { task: String, message: String },
    #[error("cannot split: need at least 2 distinct users, found {0}")]
    TooFewUsers(usize),
    #[error("split ratio must be in (0, 1), got {0}")]
    BadRatio(f64),
    #[error("downsample fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("statistics need at least one record")]
    Empty,
    #[error("record {id}: label {label:?} is not a class of task {task}")]
    UnknownLabel { id: String, label: String, task: String },
}

/// One labeled text item.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub label: ClassLabel,
    pub user_id: String,
    pub source: String,
}
