use serde::{Deserialize, Serialize};

use super::tokens::TokenCounter;
use super::{CorpusError, Record, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassShare {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

/// Size, class balance and token-length summary of a record set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub count: usize,
    pub classes: Vec<ClassShare>,
    pub token_mean: f64,
    /// Population standard deviation.
    pub token_std: f64,
}

pub fn dataset_stats(records: &[Record], task: &TaskSpec, counter: &dyn TokenCounter) -> Result<DatasetStats, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut counts = vec![0usize; task.classes.len()];
    for r in records {
        match task.classes.get(r.label.ordinal) {
            Some(c) if *c == r.label => counts[r.label.ordinal] += 1,
            _ => {
                return Err(CorpusError::UnknownLabel {
                    id: r.id.clone(),
                    label: r.label.name.clone(),
                    task: task.task_id.to_string(),
                })
            }
        }
    }
    let n = records.len() as f64;
    let lengths: Vec<f64> = records.iter().map(|r| counter.count(&r.text) as f64).collect();
    let mean = lengths.iter().sum::<f64>() / n;
    let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    Ok(DatasetStats {
        count: records.len(),
        classes: task
            .classes
            .iter()
            .zip(counts)
            .map(|(c, count)| ClassShare {
                label: c.name.clone(),
                count,
                percent: 100.0 * count as f64 / n,
            })
            .collect(),
        token_mean: mean,
        token_std: var.sqrt(),
    })
}

impl DatasetStats {
    /// One-line summary in the form `715 (48.4% no, 51.6% yes), tokens 113 ± 39`.
    pub fn summary_line(&self) -> String {
        let shares: Vec<String> = self
            .classes
            .iter()
            .map(|c| format!("{:.1}% {}", c.percent, c.label))
            .collect();
        format!(
            "{} ({}), tokens {:.0} ± {:.0}",
            self.count,
            shares.join(", "),
            self.token_mean,
            self.token_std
        )
    }
}
