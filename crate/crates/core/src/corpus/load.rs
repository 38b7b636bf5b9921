use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::{normalize_label, Granularity, TaskSpec};
use super::{CorpusError, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    Csv,
    Tsv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<DataFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(DataFormat::Csv),
            "tsv" | "tab" => Some(DataFormat::Tsv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

/// Field mapping for an input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub text: String,
    pub label: String,
    pub user_id: String,
    /// Record id column. Rows get `"<source>-<row>"` ids when absent.
    pub id: Option<String>,
    /// Raw label value (after trim + lowercase) to class name.
    pub label_map: BTreeMap<String, String>,
    /// Overrides extension-based format detection.
    pub format: Option<DataFormat>,
}

impl Default for Schema {
    fn default() -> Self {
        Schema {
            text: "text".into(),
            label: "label".into(),
            user_id: "user_id".into(),
            id: None,
            label_map: BTreeMap::new(),
            format: None,
        }
    }
}

/// A row that could not be turned into a record. `row` is 1-based over data
/// rows (the header is not counted).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub records: Vec<Record>,
    pub errors: Vec<RowError>,
}

struct RawRow {
    row: usize,
    id: Option<String>,
    text: Option<String>,
    label: Option<String>,
    user_id: Option<String>,
    parse_error: Option<String>,
}

/// Reads a delimiter-separated or JSON-lines file into validated records.
///
/// Malformed rows are collected in [`LoadReport::errors`]; only problems with
/// the file as a whole are returned as `Err`.
pub fn load_dataset(path: &Path, schema: &Schema, task: &TaskSpec) -> Result<LoadReport, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let format = schema
        .format
        .or_else(|| DataFormat::from_path(path))
        .ok_or_else(|| CorpusError::Format {
            path: path.to_path_buf(),
            message: "unrecognized extension; set schema.format".into(),
        })?;
    let source = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let rows = match format {
        DataFormat::Csv => read_delimited(path, b',', schema)?,
        DataFormat::Tsv => read_delimited(path, b'\t', schema)?,
        DataFormat::Jsonl => read_jsonl(path, schema)?,
    };
    Ok(build_records(rows, schema, task, &source))
}

fn read_delimited(path: &Path, delimiter: u8, schema: &Schema) -> Result<Vec<RawRow>, CorpusError> {
    let io_err = |e: csv::Error| CorpusError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        // An empty file has no header and no rows.
        Err(_) => return Ok(Vec::new()),
    };
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    let column = |name: &str| headers.iter().position(|h| h.trim() == name);
    let text_col = column(&schema.text);
    let label_col = column(&schema.label);
    let user_col = column(&schema.user_id);
    let id_col = schema.id.as_deref().and_then(column);
    for (field, col) in [(&schema.text, text_col), (&schema.label, label_col), (&schema.user_id, user_col)] {
        if col.is_none() {
            return Err(CorpusError::Format {
                path: path.to_path_buf(),
                message: format!("missing column {field:?}"),
            });
        }
    }
    let mut rows = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let record = result.map_err(io_err)?;
        let get = |col: Option<usize>| col.and_then(|c| record.get(c)).map(str::to_string);
        rows.push(RawRow {
            row: i + 1,
            id: get(id_col),
            text: get(text_col),
            label: get(label_col),
            user_id: get(user_col),
            parse_error: None,
        });
    }
    Ok(rows)
}

fn read_jsonl(path: &Path, schema: &Schema) -> Result<Vec<RawRow>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows = Vec::new();
    let mut row = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let value: serde_json::Value = match serde_json::from_str(&line) {
            Ok(v) => v,
            Err(e) => {
                rows.push(RawRow {
                    row,
                    id: None,
                    text: None,
                    label: None,
                    user_id: None,
                    parse_error: Some(format!("invalid JSON: {e}")),
                });
                continue;
            }
        };
        let get = |key: &str| value.get(key).and_then(scalar_to_string);
        rows.push(RawRow {
            row,
            id: schema.id.as_deref().and_then(get),
            text: get(&schema.text),
            label: get(&schema.label),
            user_id: get(&schema.user_id),
            parse_error: None,
        });
    }
    Ok(rows)
}

fn scalar_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn build_records(rows: Vec<RawRow>, schema: &Schema, task: &TaskSpec, source: &str) -> LoadReport {
    let mut report = LoadReport::default();
    let mut seen_ids = HashSet::new();
    // (record, row) pairs kept so user-level aggregation can report rows.
    let mut valid: Vec<(Record, usize)> = Vec::new();
    for raw in rows {
        let fail = |message: String| RowError { row: raw.row, message };
        if let Some(message) = raw.parse_error {
            report.errors.push(fail(message));
            continue;
        }
        let text = match raw.text {
            Some(t) if !t.trim().is_empty() => t,
            Some(_) => {
                report.errors.push(fail("empty text".into()));
                continue;
            }
            None => {
                report.errors.push(fail("missing text field".into()));
                continue;
            }
        };
        let user_id = match raw.user_id.map(|u| u.trim().to_string()) {
            Some(u) if !u.is_empty() => u,
            _ => {
                report.errors.push(fail("missing user id".into()));
                continue;
            }
        };
        let Some(raw_label) = raw.label else {
            report.errors.push(fail("missing label".into()));
            continue;
        };
        let key = normalize_label(&raw_label);
        let mapped = schema.label_map.get(&key).map(|s| s.as_str()).unwrap_or(&key);
        let Some(label) = task.class_by_name(mapped) else {
            report
                .errors
                .push(fail(format!("unknown label {raw_label:?} for task {}", task.task_id)));
            continue;
        };
        let id = raw
            .id
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| format!("{source}-{}", raw.row));
        if !seen_ids.insert(id.clone()) {
            report.errors.push(fail(format!("duplicate record id {id:?}")));
            continue;
        }
        valid.push((
            Record {
                id,
                text,
                label: label.clone(),
                user_id,
                source: source.to_string(),
            },
            raw.row,
        ));
    }
    match task.granularity {
        Granularity::Post => report.records = valid.into_iter().map(|(r, _)| r).collect(),
        Granularity::User => aggregate_users(valid, &mut report),
    }
    report
}

/// Concatenates each user's posts in file order, separated by a blank line.
fn aggregate_users(valid: Vec<(Record, usize)>, report: &mut LoadReport) {
    let mut order: Vec<String> = Vec::new();
    let mut by_user: HashMap<String, Record> = HashMap::new();
    let mut conflicted: HashSet<String> = HashSet::new();
    for (record, row) in valid {
        match by_user.get_mut(&record.user_id) {
            None => {
                order.push(record.user_id.clone());
                by_user.insert(
                    record.user_id.clone(),
                    Record {
                        id: record.user_id.clone(),
                        ..record
                    },
                );
            }
            Some(existing) => {
                if existing.label != record.label {
                    report.errors.push(RowError {
                        row,
                        message: format!(
                            "user {} has conflicting labels {:?} and {:?}",
                            record.user_id, existing.label.name, record.label.name
                        ),
                    });
                    conflicted.insert(record.user_id.clone());
                    continue;
                }
                existing.text.push_str("\n\n");
                existing.text.push_str(&record.text);
            }
        }
    }
    report.records = order
        .into_iter()
        .filter(|u| !conflicted.contains(u))
        .filter_map(|u| by_user.remove(&u))
        .collect();
}
