mod common;

use std::collections::BTreeMap;
use std::fs;

use mhbench::backends::{MockRule, MockSpec};
use mhbench::runner::{load_config, read_records, render_report, run_experiment, RunOptions, RECORDS_FILE};

fn options(mock: Option<MockSpec>) -> RunOptions {
    RunOptions { resume: false, mock }
}

#[test]
fn planted_hidden_labels_score_085() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(&common::hidden_label_fixture(dir.path(), 0)).unwrap();
    let outcome = run_experiment(&config, &options(None)).unwrap();
    assert!(outcome.complete);
    assert_eq!(outcome.total_cells, 600);
    assert_eq!(outcome.report.reports.len(), 1);
    let r = &outcome.report.reports[0];
    assert_eq!(r.n_variants, 3);
    assert!((r.mean - 0.85).abs() < 1e-12, "{}", r.mean);
    assert!(!outcome.run_dir.join("PARTIAL").exists());
    assert!(outcome.report.summary_text.contains("planted_ZS_basic"));
    assert!(outcome.report.summary_text.contains("0.850±0.000"));
}

#[test]
fn oracle_and_constant_mocks() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(&common::hidden_label_fixture(dir.path(), 0)).unwrap();

    let mut labels = BTreeMap::new();
    for i in 0..200 {
        labels.insert(format!("t{i:03}"), ["No", "Yes"][i % 2].to_string());
    }
    let oracle = MockSpec::new(MockRule::HiddenLabel {
        labels,
        fallback: "?".into(),
    });
    let out = run_experiment(&config, &options(Some(oracle))).unwrap();
    assert!(out.report.reports.iter().all(|r| r.mean == 1.0));
    assert!(out.report.reports[0].per_variant.iter().all(|v| v.balanced_accuracy == 1.0));

    let fixed = MockSpec::new(MockRule::Fixed { response: "Yes".into() });
    let out = run_experiment(&config, &options(Some(fixed))).unwrap();
    assert!(out.report.reports.iter().all(|r| r.mean == 0.5));
}

/// Recomputes mean balanced accuracy per (model, mode, strategy) straight
/// from the records file.
fn brute_force(records: &[mhbench::runner::RunRecord]) -> BTreeMap<String, f64> {
    let mut by_variant: BTreeMap<(String, String), Vec<(Option<String>, String)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.status.is_scored()) {
        let group = format!("{}|{:?}|{:?}", r.model, r.mode, r.strategy);
        let variant = format!("{}|{}", r.variant, r.repeat_index);
        by_variant.entry((group, variant)).or_default().push((r.pred.clone(), r.gold.clone()));
    }
    let mut per_group: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((group, _), items) in by_variant {
        let mut golds: Vec<&String> = items.iter().map(|(_, g)| g).collect();
        golds.sort();
        golds.dedup();
        let recalls: Vec<f64> = golds
            .iter()
            .map(|g| {
                let of_class: Vec<_> = items.iter().filter(|(_, gold)| gold == *g).collect();
                let hits = of_class.iter().filter(|(p, _)| p.as_deref() == Some(g.as_str())).count();
                hits as f64 / of_class.len() as f64
            })
            .collect();
        per_group.entry(group).or_default().push(recalls.iter().sum::<f64>() / recalls.len() as f64);
    }
    per_group
        .into_iter()
        .map(|(g, v)| (g, v.iter().sum::<f64>() / v.len() as f64))
        .collect()
}

#[test]
fn report_equals_brute_force_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(&common::matrix_fixture(dir.path(), 4)).unwrap();
    let out = run_experiment(&config, &options(None)).unwrap();
    assert!(out.complete, "{:?}", out.backend_errors);
    let records = read_records(&out.run_dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.len(), out.total_cells);
    let expected = brute_force(&records);
    assert_eq!(expected.len(), out.report.reports.len());
    for r in &out.report.reports {
        let k = format!("{}|{:?}|{:?}", r.key.model, r.key.mode, r.key.strategy.unwrap());
        assert!((expected[&k] - r.mean).abs() < 1e-12, "{k}");
    }
    // few-shot records carry exemplar ids from the train split only
    let test_ids: std::collections::HashSet<_> = records.iter().map(|r| r.record_id.clone()).collect();
    for r in records.iter().filter(|r| r.mode == mhbench::prompt::Mode::FewShot) {
        assert_eq!(r.exemplars.len(), 2);
        assert!(r.exemplars.iter().all(|e| !test_ids.contains(e)));
    }
    // re-rendering from disk reproduces the in-run report
    assert_eq!(render_report(&out.run_dir).unwrap(), out.report);
}

#[test]
fn concurrency_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let a = run_experiment(&load_config(&common::matrix_fixture(dir.path(), 1)).unwrap(), &options(None)).unwrap();
    let b = run_experiment(&load_config(&common::matrix_fixture(dir.path(), 16)).unwrap(), &options(None)).unwrap();
    assert_ne!(a.run_dir, b.run_dir);
    let lines = |d: &std::path::Path| {
        let mut v: Vec<String> = fs::read_to_string(d.join(RECORDS_FILE)).unwrap().lines().map(String::from).collect();
        v.sort();
        v
    };
    assert_eq!(lines(&a.run_dir), lines(&b.run_dir));
    assert_eq!(a.report, b.report);
}

#[test]
fn resume_after_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let config = load_config(&common::hidden_label_fixture(dir.path(), 0)).unwrap();
    let full = run_experiment(&config, &options(None)).unwrap();
    let path = full.run_dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).unwrap();
    let keep: Vec<&str> = text.lines().take(250).collect();
    // simulate a kill mid-write: a cut-off final line
    fs::write(&path, format!("{}\n{}", keep.join("\n"), &text.lines().nth(251).unwrap()[..30])).unwrap();

    let partial = render_report(&full.run_dir).unwrap();
    assert!(!partial.complete);
    assert!(partial.summary_text.starts_with("PARTIAL RUN: 250/600"));
    assert!(partial.summary_text.contains("[250/600]"));

    let resumed = run_experiment(&config, &RunOptions { resume: true, mock: None }).unwrap();
    assert_eq!(resumed.resumed, 250);
    assert!(resumed.complete);
    assert_eq!(resumed.report, full.report);
    assert_eq!(read_records(&path).unwrap().len(), 600);
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 600);
}

#[test]
fn failing_lane_aborts_while_others_finish() {
    let dir = tempfile::tempdir().unwrap();
    common::hidden_label_fixture(dir.path(), 0);
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config_text = fs::read_to_string(dir.path().join("experiment.toml")).unwrap()
        + &format!(
            "\n[[models]]\nname = \"dead\"\nendpoint = \"http://127.0.0.1:{port}/v1/chat/completions\"\nmax_retries = 0\nbackoff_base_ms = 1\nrate_limit = 1000.0\nrequest_timeout_secs = 2.0\n"
        );
    let path = dir.path().join("two-lanes.toml");
    fs::write(&path, config_text).unwrap();
    let config = load_config(&path).unwrap();
    let out = run_experiment(&config, &options(None)).unwrap();
    assert_eq!(out.aborted_lanes, vec!["dead".to_string()]);
    assert!(!out.complete);
    assert_eq!(out.scored, 600);
    assert!(out.backend_errors >= 20 && out.backend_errors < 600);
    let marker = fs::read_to_string(out.run_dir.join("PARTIAL")).unwrap();
    assert!(marker.contains("aborted model lanes: dead"), "{marker}");
    assert!(out.report.summary_text.contains("dead_ZS_basic"));
    assert!(out.report.summary_text.contains("[0/600]"));
}

#[test]
fn unresolvable_few_shot_budget_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let long = "word ".repeat(1200);
    common::write_csv(
        &dir.path().join("train.csv"),
        &(0..4)
            .map(|i| (format!("r{i}"), long.clone(), ["no", "yes"][i % 2].into(), format!("u{i}")))
            .collect::<Vec<_>>(),
    );
    common::write_csv(
        &dir.path().join("test.csv"),
        &[("q0".into(), "short post".into(), "yes".into(), "uq".into())],
    );
    fs::write(dir.path().join("m.toml"), "[rule]\nkind = \"fixed\"\nresponse = \"Yes\"\n").unwrap();
    let path = dir.path().join("c.toml");
    fs::write(
        &path,
        "output_dir = \"out\"\nmodes = [\"few_shot\"]\nstrategies = [\"basic\"]\n[few_shot]\nrepeats = 1\nmax_resamples = 3\n[[datasets]]\nname = \"d\"\ntrain_path = \"train.csv\"\ntest_path = \"test.csv\"\ntask = 1\n[[models]]\nname = \"m\"\nmock = \"m.toml\"\n",
    )
    .unwrap();
    let out = run_experiment(&load_config(&path).unwrap(), &options(None)).unwrap();
    assert!(out.complete);
    let records = read_records(&out.run_dir.join(RECORDS_FILE)).unwrap();
    assert_eq!(records.len(), 3);
    for r in &records {
        assert_eq!(r.status, mhbench::runner::RecordStatus::PromptError);
        assert!(r.error.as_deref().unwrap().contains("budget"));
    }
    // over-budget cells count as wrong
    assert_eq!(out.report.reports[0].mean, 0.0);
}
