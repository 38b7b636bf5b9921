use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{EvalKey, EvalReport};
use crate::corpus::TaskId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub key: EvalKey,
    pub label: String,
    /// One cell per column; `None` where no baseline matched.
    pub cells: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

/// Signed mean differences `compared - baseline`, matched on
/// (dataset, task, model).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    pub columns: Vec<(String, TaskId)>,
    pub rows: Vec<DeltaRow>,
    pub column_means: Vec<Option<f64>>,
    /// Keys on either side that found no partner.
    pub unmatched: Vec<String>,
}

/// `↑` when the delta rounded to three decimals is non-negative, `↓` otherwise.
pub fn direction(delta: f64) -> &'static str {
    if (delta * 1000.0).round() >= 0.0 {
        "↑"
    } else {
        "↓"
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn delta_report(baseline: &[EvalReport], compared: &[EvalReport]) -> DeltaTable {
    let base: BTreeMap<(String, TaskId, String), &EvalReport> = baseline
        .iter()
        .map(|r| ((r.key.dataset.clone(), r.key.task.clone(), r.key.model.clone()), r))
        .collect();
    let mut unmatched = Vec::new();
    let mut used = BTreeSet::new();
    let mut columns = BTreeSet::new();
    // row key (model, mode, strategy) -> column -> delta
    let mut grid: BTreeMap<EvalKey, BTreeMap<(String, TaskId), f64>> = BTreeMap::new();
    for r in compared {
        let k = (r.key.dataset.clone(), r.key.task.clone(), r.key.model.clone());
        let Some(b) = base.get(&k) else {
            unmatched.push(format!("no baseline for {} on {}/{}", r.key.row_label(), k.0, k.1));
            continue;
        };
        used.insert(k.clone());
        let col = (k.0, k.1);
        columns.insert(col.clone());
        let row_key = EvalKey {
            dataset: String::new(),
            task: TaskId::new(""),
            ..r.key.clone()
        };
        grid.entry(row_key).or_default().insert(col, r.mean - b.mean);
    }
    for (k, r) in &base {
        if !used.contains(k) {
            unmatched.push(format!("baseline {} on {}/{} has no comparison", r.key.row_label(), k.0, k.1));
        }
    }
    let columns: Vec<(String, TaskId)> = columns.into_iter().collect();
    let rows: Vec<DeltaRow> = grid
        .into_iter()
        .map(|(key, cells)| {
            let cells: Vec<Option<f64>> = columns.iter().map(|c| cells.get(c).copied()).collect();
            DeltaRow {
                label: format!("Δ-{}", key.row_label()),
                mean: mean(cells.iter().flatten().copied()),
                key,
                cells,
            }
        })
        .collect();
    let column_means = (0..columns.len())
        .map(|i| mean(rows.iter().filter_map(|r| r.cells[i])))
        .collect();
    DeltaTable {
        columns,
        rows,
        column_means,
        unmatched,
    }
}
