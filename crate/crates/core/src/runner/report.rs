use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::plan::RunPlan;
use super::{RunError, RunRecord, PLAN_FILE, RECORDS_FILE, REPORT_DIR};
use crate::metrics::table::Table;
use crate::metrics::{
    balanced_accuracy, delta_report, direction, select_best_variant, ConfusionMatrix, EvalKey, EvalReport,
    VariantResult,
};
use crate::prompt::{Mode, Strategy, VariantKey};

/// Reads a records file. Lines that do not parse are skipped with a warning;
/// an unterminated final line (a write cut short) is ignored.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, RunError> {
    let bytes = fs::read(path).map_err(RunError::io(path))?;
    let mut records = Vec::new();
    let mut rest = &bytes[..];
    let mut line_no = 0;
    while let Some(end) = rest.iter().position(|&b| b == b'\n') {
        line_no += 1;
        let line = &rest[..end];
        rest = &rest[end + 1..];
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        match serde_json::from_slice::<RunRecord>(line) {
            Ok(r) => records.push(r),
            Err(e) => log::warn!("{}: line {line_no}: {e}; skipped", path.display()),
        }
    }
    if !rest.iter().all(u8::is_ascii_whitespace) {
        log::warn!("{}: ignoring truncated final line", path.display());
    }
    Ok(records)
}

/// Rendered tables of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedReport {
    pub summary_text: String,
    pub summary_csv: String,
    pub deltas_text: String,
    pub deltas_csv: String,
    pub best_text: String,
    pub best_csv: String,
    pub reports: Vec<EvalReport>,
    pub complete: bool,
}

fn fmt3(v: f64) -> String {
    // avoid "-0.000"
    let r = (v * 1000.0).round() / 1000.0;
    format!("{:.3}", if r == 0.0 { 0.0 } else { r })
}

fn fmt_delta(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    format!("{:+.3}{}", if r == 0.0 { 0.0 } else { r }, direction(v))
}

struct Group {
    scored: usize,
    cells: BTreeMap<(VariantKey, usize), ConfusionMatrix>,
}

/// Computes reports and tables from a run directory's records and plan.
pub fn render_report(run_dir: &Path) -> Result<RenderedReport, RunError> {
    let plan_path = run_dir.join(PLAN_FILE);
    let plan: RunPlan = serde_json::from_slice(&fs::read(&plan_path).map_err(RunError::io(&plan_path))?)
        .map_err(|e| RunError::Report(format!("{}: {e}", plan_path.display())))?;
    let records_path = run_dir.join(RECORDS_FILE);
    if !records_path.exists() {
        return Err(RunError::Report(format!("{} has no records", run_dir.display())));
    }
    let records = read_records(&records_path)?;
    if records.is_empty() && plan.total_cells > 0 {
        return Err(RunError::Report(format!("{} has no records", run_dir.display())));
    }

    let mut groups: BTreeMap<EvalKey, Group> = BTreeMap::new();
    let mut seen = HashSet::new();
    for r in records {
        if !r.status.is_scored() || !seen.insert(r.cell_key()) {
            continue;
        }
        let task = plan
            .task(&r.dataset)
            .ok_or_else(|| RunError::Report(format!("record {} names unknown dataset {}", r.record_id, r.dataset)))?;
        let gold = task
            .class_by_name(&r.gold)
            .ok_or_else(|| RunError::Report(format!("record {}: unknown gold {:?}", r.record_id, r.gold)))?
            .ordinal;
        let pred = r.pred.as_deref().and_then(|p| task.class_by_name(p)).map(|c| c.ordinal);
        let key = EvalKey {
            dataset: r.dataset.clone(),
            task: r.task.clone(),
            model: r.model.clone(),
            mode: r.mode,
            strategy: Some(r.strategy),
        };
        let group = groups.entry(key).or_insert_with(|| Group {
            scored: 0,
            cells: BTreeMap::new(),
        });
        group.scored += 1;
        group
            .cells
            .entry((r.variant, r.repeat_index))
            .or_insert_with(|| ConfusionMatrix::new(&task.classes))
            .add(pred, gold);
    }

    let mut reports = Vec::new();
    let mut scored_by_key = BTreeMap::new();
    for (key, group) in groups {
        let mut per_variant = Vec::new();
        for ((variant, repeat), matrix) in group.cells {
            match balanced_accuracy(&matrix) {
                Ok(ba) => per_variant.push(VariantResult {
                    variant,
                    repeat,
                    balanced_accuracy: ba.value,
                    matrix,
                }),
                Err(e) => log::warn!("{} {variant} repeat {repeat}: {e}", key.row_label()),
            }
        }
        if per_variant.is_empty() {
            continue;
        }
        scored_by_key.insert(key.clone(), group.scored);
        reports.push(EvalReport::from_variants(key, per_variant));
    }

    let scored_total: usize = scored_by_key.values().sum();
    let complete = scored_total == plan.total_cells && plan.groups.iter().all(|g| scored_by_key.get(&g.key) == Some(&g.expected));
    let columns: Vec<(String, String)> = plan
        .datasets
        .iter()
        .map(|d| (d.name.clone(), d.task.task_id.to_string()))
        .collect();

    // summary: one row per (model, mode, strategy), one column per dataset
    let mut header = vec!["model".to_string()];
    header.extend(columns.iter().map(|(d, t)| format!("{d} #{t}")));
    let mut summary = Table::new(header);
    let mut majority_row = vec!["Majority".to_string()];
    for d in &plan.datasets {
        majority_row.push(d.majority.as_ref().map(|m| fmt3(m.mean)).unwrap_or_else(|| "n/a".into()));
    }
    summary.push(majority_row);
    let mut csv = Table::new(
        ["row", "dataset", "task", "mean", "std", "n_variants", "scored", "expected"]
            .map(String::from)
            .to_vec(),
    );
    for d in &plan.datasets {
        if let Some(m) = &d.majority {
            csv.push(vec![
                "Majority".into(),
                d.name.clone(),
                d.task.task_id.to_string(),
                format!("{:.6}", m.mean),
                format!("{:.6}", m.std),
                "1".into(),
                d.test.to_string(),
                d.test.to_string(),
            ]);
        }
    }
    let mut rows: BTreeMap<(String, Mode, Option<Strategy>), BTreeMap<String, String>> = BTreeMap::new();
    for g in &plan.groups {
        let row = (g.key.model.clone(), g.key.mode, g.key.strategy);
        let scored = scored_by_key.get(&g.key).copied().unwrap_or(0);
        let report = reports.iter().find(|r| r.key == g.key);
        let mut cell = match report {
            Some(r) => format!("{}±{}", fmt3(r.mean), fmt3(r.std)),
            None => "n/a".into(),
        };
        if scored != g.expected {
            cell.push_str(&format!(" [{scored}/{}]", g.expected));
        }
        rows.entry(row).or_default().insert(g.key.dataset.clone(), cell);
        csv.push(vec![
            g.key.row_label(),
            g.key.dataset.clone(),
            g.key.task.to_string(),
            report.map(|r| format!("{:.6}", r.mean)).unwrap_or_default(),
            report.map(|r| format!("{:.6}", r.std)).unwrap_or_default(),
            report.map(|r| r.n_variants.to_string()).unwrap_or_default(),
            scored.to_string(),
            g.expected.to_string(),
        ]);
    }
    for ((model, mode, strategy), cells) in &rows {
        let key = EvalKey {
            dataset: String::new(),
            task: "".into(),
            model: model.clone(),
            mode: *mode,
            strategy: *strategy,
        };
        let mut row = vec![key.row_label()];
        row.extend(columns.iter().map(|(d, _)| cells.get(d).cloned().unwrap_or_else(|| "-".into())));
        summary.push(row);
    }
    let mut summary_text = String::new();
    if !complete {
        summary_text.push_str(&format!(
            "PARTIAL RUN: {scored_total}/{} cells scored; [scored/expected] marks incomplete cells\n\n",
            plan.total_cells
        ));
    }
    summary_text.push_str(&summary.to_text());

    // deltas against zero-shot basic prompts of the same model
    let (baseline, compared): (Vec<EvalReport>, Vec<EvalReport>) = reports
        .iter()
        .cloned()
        .partition(|r| r.key.mode == Mode::ZeroShot && r.key.strategy == Some(Strategy::Basic));
    let delta = delta_report(&baseline, &compared);
    let mut header = vec!["row".to_string()];
    header.extend(delta.columns.iter().map(|(d, t)| format!("{d} #{t}")));
    header.push("mean".into());
    let mut deltas = Table::new(header);
    for row in &delta.rows {
        let mut cells = vec![row.label.clone()];
        cells.extend(row.cells.iter().map(|c| c.map(fmt_delta).unwrap_or_else(|| "n/a".into())));
        cells.push(row.mean.map(fmt_delta).unwrap_or_else(|| "n/a".into()));
        deltas.push(cells);
    }
    if !delta.rows.is_empty() {
        let mut cells = vec!["column mean".to_string()];
        cells.extend(delta.column_means.iter().map(|c| c.map(fmt_delta).unwrap_or_else(|| "n/a".into())));
        deltas.push(cells);
    }
    let deltas_text = if baseline.is_empty() {
        "no zero-shot basic results to compare against\n".to_string()
    } else {
        deltas.to_text()
    };

    // best zero-shot variant per (dataset, task, model), chosen on test data
    let mut best = Table::new(
        ["dataset", "task", "model", "strategy", "variant", "balanced_accuracy", "test_set_selected"]
            .map(String::from)
            .to_vec(),
    );
    let mut best_by: BTreeMap<(String, String, String), (Strategy, crate::metrics::BestVariant)> = BTreeMap::new();
    for r in reports.iter().filter(|r| r.key.mode == Mode::ZeroShot) {
        let (Some(strategy), Some(b)) = (r.key.strategy, select_best_variant(r)) else { continue };
        let k = (r.key.dataset.clone(), r.key.task.to_string(), r.key.model.clone());
        match best_by.get(&k) {
            Some((_, cur)) if cur.balanced_accuracy >= b.balanced_accuracy => {}
            _ => {
                best_by.insert(k, (strategy, b));
            }
        }
    }
    for ((dataset, task, model), (strategy, b)) in &best_by {
        best.push(vec![
            dataset.clone(),
            task.clone(),
            format!("{model}_ZS_best"),
            strategy.to_string(),
            b.variant.to_string(),
            fmt3(b.balanced_accuracy),
            b.test_set_selected.to_string(),
        ]);
    }
    let mut best_text = best.to_text();
    best_text.push_str("\nZS_best picks the variant with the highest test-split score, so it is optimistic.\n");

    Ok(RenderedReport {
        summary_text,
        summary_csv: csv.to_csv(),
        deltas_text,
        deltas_csv: deltas.to_csv(),
        best_text,
        best_csv: best.to_csv(),
        reports,
        complete,
    })
}

/// Renders the report and writes it under `<run_dir>/report/`.
pub fn write_report(run_dir: &Path) -> Result<RenderedReport, RunError> {
    let report = render_report(run_dir)?;
    let dir = run_dir.join(REPORT_DIR);
    fs::create_dir_all(&dir).map_err(RunError::io(&dir))?;
    for (name, body) in [
        ("summary.txt", &report.summary_text),
        ("summary.csv", &report.summary_csv),
        ("deltas.txt", &report.deltas_text),
        ("deltas.csv", &report.deltas_csv),
        ("best.txt", &report.best_text),
        ("best.csv", &report.best_csv),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(RunError::io(&path))?;
    }
    let path = dir.join("reports.json");
    let json = serde_json::to_string_pretty(&report.reports).expect("reports serialize");
    fs::write(&path, json).map_err(RunError::io(&path))?;
    Ok(report)
}
