//! Balanced accuracy, confusion matrices and report aggregation.
//!
//! Balanced accuracy is the unweighted mean of per-class recall. For two
//! classes this is the mean of sensitivity and specificity; a constant
//! predictor scores exactly `1/K` on a K-class task.

mod delta;
pub mod table;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use delta::{delta_report, direction, DeltaRow, DeltaTable};

use crate::corpus::{ClassLabel, TaskId, TaskSpec};
use crate::parsing::ParseOutcome;
use crate::prompt::{Mode, Strategy, VariantKey};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no items to score")]
    Empty,
    #[error("label {0:?} is not a class of this task")]
    UnknownLabel(String),
    #[error("matrices have different class lists")]
    ClassMismatch,
    #[error("no gold class has any instance")]
    NoGoldInstances,
}

/// Counts indexed `[pred][gold]`. The extra last prediction row collects
/// unparseable and ambiguous outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassLabel>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[ClassLabel]) -> Self {
        ConfusionMatrix {
            classes: classes.to_vec(),
            counts: vec![vec![0; classes.len()]; classes.len() + 1],
        }
    }

    pub fn unparseable_row(&self) -> usize {
        self.classes.len()
    }

    /// `pred = None` marks an unparseable prediction.
    pub fn add(&mut self, pred: Option<usize>, gold: usize) {
        let row = pred.unwrap_or(self.classes.len());
        self.counts[row][gold] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.classes != other.classes {
            return Err(MetricsError::ClassMismatch);
        }
        for (row, other_row) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn gold_count(&self, gold: usize) -> u64 {
        self.counts.iter().map(|row| row[gold]).sum()
    }

    pub fn correct(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn unparseable(&self) -> u64 {
        self.counts[self.classes.len()].iter().sum()
    }
}

pub fn confusion_matrix(
    preds: &[ParseOutcome],
    golds: &[ClassLabel],
    task: &TaskSpec,
) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != golds.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let index = |label: &ClassLabel| {
        task.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.name.clone()))
    };
    let mut matrix = ConfusionMatrix::new(&task.classes);
    for (pred, gold) in preds.iter().zip(golds) {
        let gold = index(gold)?;
        let pred = match (&pred.label, pred.is_parsed()) {
            (Some(label), true) => Some(index(label)?),
            _ => None,
        };
        matrix.add(pred, gold);
    }
    Ok(matrix)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRecall {
    pub class: String,
    pub correct: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedAccuracy {
    pub value: f64,
    /// Exact counts for each class that has gold instances.
    pub recalls: Vec<ClassRecall>,
    /// Classes with no gold instance, left out of the mean.
    pub excluded: Vec<String>,
}

pub fn balanced_accuracy(matrix: &ConfusionMatrix) -> Result<BalancedAccuracy, MetricsError> {
    let mut recalls = Vec::new();
    let mut excluded = Vec::new();
    for (k, class) in matrix.classes.iter().enumerate() {
        let total = matrix.gold_count(k);
        if total == 0 {
            log::warn!("class {:?} has no gold instances; excluded from balanced accuracy", class.name);
            excluded.push(class.name.clone());
            continue;
        }
        recalls.push(ClassRecall {
            class: class.name.clone(),
            correct: matrix.correct(k),
            total,
        });
    }
    if recalls.is_empty() {
        return Err(MetricsError::NoGoldInstances);
    }
    let sum: f64 = recalls.iter().map(|r| r.correct as f64 / r.total as f64).sum();
    Ok(BalancedAccuracy {
        value: sum / recalls.len() as f64,
        recalls,
        excluded,
    })
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate_variants(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Identifies one report: a (dataset, task, model, mode, strategy) cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EvalKey {
    pub dataset: String,
    pub task: TaskId,
    pub model: String,
    pub mode: Mode,
    pub strategy: Option<Strategy>,
}

impl EvalKey {
    /// Row label such as `gpt-4_ZS_context`.
    pub fn row_label(&self) -> String {
        match self.strategy {
            Some(s) => format!("{}_{}_{}", self.model, self.mode.tag(), s),
            None => self.model.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub variant: VariantKey,
    pub repeat: usize,
    pub balanced_accuracy: f64,
    pub matrix: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub key: EvalKey,
    pub per_variant: Vec<VariantResult>,
    pub mean: f64,
    pub std: f64,
    pub n_variants: usize,
}

impl EvalReport {
    /// Aggregates per-variant results. Entries are sorted by (variant, repeat).
    pub fn from_variants(key: EvalKey, mut per_variant: Vec<VariantResult>) -> EvalReport {
        per_variant.sort_by_key(|v| (v.variant, v.repeat));
        let values: Vec<f64> = per_variant.iter().map(|v| v.balanced_accuracy).collect();
        let (mean, std) = aggregate_variants(&values);
        EvalReport {
            key,
            n_variants: per_variant.len(),
            per_variant,
            mean,
            std,
        }
    }
}

/// Predicts the most frequent training class (lowest ordinal on ties) for
/// every test item.
pub fn majority_baseline(
    train_labels: &[ClassLabel],
    test_golds: &[ClassLabel],
    task: &TaskSpec,
    dataset: &str,
) -> Result<EvalReport, MetricsError> {
    if train_labels.is_empty() || test_golds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut counts = vec![0usize; task.classes.len()];
    for label in train_labels {
        let k = task
            .classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.name.clone()))?;
        counts[k] += 1;
    }
    let modal = majority_class(&counts);
    let outcome = ParseOutcome {
        label: Some(task.classes[modal].clone()),
        status: crate::parsing::ParseStatus::Parsed,
        matched_span: String::new(),
        rule: None,
    };
    let preds = vec![outcome; test_golds.len()];
    let matrix = confusion_matrix(&preds, test_golds, task)?;
    let ba = balanced_accuracy(&matrix)?;
    Ok(EvalReport::from_variants(
        EvalKey {
            dataset: dataset.to_string(),
            task: task.task_id.clone(),
            model: "Majority".into(),
            mode: Mode::Baseline,
            strategy: None,
        },
        vec![VariantResult {
            variant: VariantKey { part1: 0, part2: 0 },
            repeat: 0,
            balanced_accuracy: ba.value,
            matrix,
        }],
    ))
}

/// Index of the largest count; the first one wins ties.
pub fn majority_class(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

/// The highest-scoring variant of a report. It is chosen on the test set, so
/// it is an optimistic, leakage-prone number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestVariant {
    pub variant: VariantKey,
    pub repeat: usize,
    pub balanced_accuracy: f64,
    pub test_set_selected: bool,
}

pub fn select_best_variant(report: &EvalReport) -> Option<BestVariant> {
    let mut best: Option<&VariantResult> = None;
    for v in &report.per_variant {
        if best.is_none_or(|b| v.balanced_accuracy > b.balanced_accuracy) {
            best = Some(v);
        }
    }
    best.map(|v| BestVariant {
        variant: v.variant,
        repeat: v.repeat,
        balanced_accuracy: v.balanced_accuracy,
        test_set_selected: true,
    })
}
