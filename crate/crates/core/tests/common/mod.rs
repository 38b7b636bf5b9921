//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mhbench::corpus::{ClassLabel, Record, TaskSpec};
use mhbench::prompt::{PromptEngine, Strategy, VariantKey, DEFAULT_TOKEN_BUDGET};

pub const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/prompts");
pub const PARSER_CORPUS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/parser_corpus.jsonl");

pub fn record(id: &str, text: &str, label: &ClassLabel, user: &str) -> Record {
    Record {
        id: id.to_string(),
        text: text.to_string(),
        label: label.clone(),
        user_id: user.to_string(),
        source: "fixture".into(),
    }
}

// ---- golden prompts -------------------------------------------------------

pub fn post_for(task: u8) -> &'static str {
    match task {
        1 => "Work has been relentless this month and I keep waking up at 3am thinking about deadlines.",
        2 => "I haven't enjoyed anything in weeks. Even seeing friends feels like a chore.",
        3 => "Most days I can get through work, but the evenings feel empty and heavy.",
        4 => "I don't see the point in trying anymore. Everyone would be better off.",
        5 => "Posting again because last night was rough. Thanks to everyone who replied.",
        _ => "I wrote a note and gave away my things. I'm tired of fighting this.",
    }
}

/// Four solved exemplars cycling through the task's classes.
pub fn exemplars_for(task: &TaskSpec) -> Vec<(Record, ClassLabel)> {
    let texts = [
        "Just finished my first marathon and feel great.",
        "Can't stop worrying about rent and my car just broke down.",
        "Some days are fine, some days I can't get out of bed.",
        "Thank you all for the kind words on my last post.",
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let label = task.classes[i % task.classes.len()].clone();
            (record(&format!("ex{i}"), t, &label, &format!("exu{i}")), label)
        })
        .collect()
}

/// Every golden prompt as (file name, rendered text).
pub fn golden_cases(engine: &PromptEngine) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for task in TaskSpec::all_builtin() {
        let t = task.task_id.as_str().to_string();
        let query = record(&format!("q{t}"), post_for(t.parse().unwrap()), &task.classes[0], "qu");
        for strategy in Strategy::ALL {
            for v in engine.enumerate_variants(&task, strategy) {
                let zs = engine.build_zero_shot(&query, &task, strategy, v).unwrap();
                out.push((format!("t{t}_zs_{strategy}_{v}.txt"), zs.rendered));
            }
            let v0 = VariantKey { part1: 0, part2: 0 };
            let cot = engine.build_cot(&query, &task, strategy, v0).unwrap();
            out.push((format!("t{t}_cot_{strategy}_{v0}.txt"), cot.rendered));
        }
        let ex = exemplars_for(&task);
        for (m, strategy, v) in [
            (2, Strategy::Context, VariantKey { part1: 0, part2: 1 }),
            (4, Strategy::Both, VariantKey { part1: 1, part2: 2 }),
        ] {
            let fs = engine
                .build_few_shot(&query, &ex[..m], &task, strategy, v, DEFAULT_TOKEN_BUDGET)
                .unwrap();
            out.push((format!("t{t}_fs{m}_{strategy}_{v}.txt"), fs.rendered));
        }
    }
    out
}

/// Compares rendered prompts to the checked-in files, or rewrites them when
/// `UPDATE_GOLDEN` is set. Returns the number of files checked.
pub fn check_golden() -> Result<usize, String> {
    let cases = golden_cases(&PromptEngine::default());
    let dir = Path::new(GOLDEN_DIR);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(dir).unwrap();
        for entry in std::fs::read_dir(dir).unwrap().flatten() {
            std::fs::remove_file(entry.path()).unwrap();
        }
        for (name, text) in &cases {
            std::fs::write(dir.join(name), text).unwrap();
        }
        return Ok(cases.len());
    }
    let mut problems = Vec::new();
    for (name, text) in &cases {
        match std::fs::read_to_string(dir.join(name)) {
            Ok(golden) if golden == *text => {}
            Ok(_) => problems.push(format!("{name} differs")),
            Err(_) => problems.push(format!("{name} missing")),
        }
    }
    let on_disk = std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0);
    if on_disk != cases.len() {
        problems.push(format!("{on_disk} files on disk, {} expected", cases.len()));
    }
    if problems.is_empty() {
        Ok(cases.len())
    } else {
        Err(problems.join("; "))
    }
}

pub const ORACLE_PART1: [(Strategy, &[&str]); 4] = [
    (Strategy::Basic, &[""]),
    (
        Strategy::Context,
        &[
            "This person wrote this paragraph on social media.",
            "Consider this post on social media to answer the question.",
        ],
    ),
    (
        Strategy::Mh,
        &[
            "As a psychologist, read the post on social media and answer the question.",
            "If you are a psychologist, read the post on social media and answer the question.",
        ],
    ),
    (
        Strategy::Both,
        &[
            "This person wrote this paragraph on social media. As a psychologist, read the post on social media and answer the question.",
            "This person wrote this paragraph on social media. As a psychologist, consider the mental well-being condition expressed in this post, read the post on social media, and answer the question.",
        ],
    ),
];

/// Task questions with the state word already in place.
pub fn oracle_questions(task: u8) -> [&'static str; 3] {
    match task {
        1 => [
            "Is the poster stressed?",
            "Is the poster of this post stressed?",
            "Determine if the poster of this post is stressed.",
        ],
        2 => [
            "Is the poster depressed?",
            "Is the poster of this post depressed?",
            "Determine if the poster of this post is depressed.",
        ],
        3 => [
            "Which level is the person depressed?",
            "How depressed is the person?",
            "Determine how depressed the person is.",
        ],
        4 | 5 => [
            "Does the poster want to suicide?",
            "Is the poster likely to suicide?",
            "Determine if the poster of this post want to suicide.",
        ],
        _ => [
            "Which level of suicide risk does the person have?",
            "How suicidal is the person?",
            "Determine which level of suicide risk does the person have.",
        ],
    }
}

pub fn oracle_constraint(task: u8) -> &'static str {
    match task {
        3 => "Only return Minimal, Mild, Moderate, or Severe.",
        6 => "Only return Supportive, Indicator, Ideation, Behavior, or Attempt.",
        _ => "Only return Yes or No.",
    }
}

pub fn oracle_zero_shot(text: &str, task: u8, strategy: Strategy, v: VariantKey) -> String {
    let part1 = ORACLE_PART1.iter().find(|(s, _)| *s == strategy).unwrap().1[v.part1];
    let mut out = String::new();
    write!(out, "{text}\n").unwrap();
    if !part1.is_empty() {
        write!(out, "{part1}\n").unwrap();
    }
    write!(out, "{}\n{}", oracle_questions(task)[v.part2], oracle_constraint(task)).unwrap();
    out
}

/// Checks the engine against the oracle for every zero-shot variant and the
/// catalog for completeness. Returns the number of prompts compared.
pub fn check_oracle() -> Result<usize, String> {
    let engine = PromptEngine::default();
    let mut n = 0;
    for (strategy, lines) in ORACLE_PART1 {
        let have: Vec<&str> = engine.catalog().part1_variants(strategy).iter().map(String::as_str).collect();
        if have != lines {
            return Err(format!("catalog {strategy} part-1 list differs"));
        }
    }
    for task in TaskSpec::all_builtin() {
        let id: u8 = task.task_id.as_str().parse().unwrap();
        for strategy in Strategy::ALL {
            for v in engine.enumerate_variants(&task, strategy) {
                let got = engine.render_zero_shot(post_for(id), &task, strategy, v).map_err(|e| e.to_string())?;
                let want = oracle_zero_shot(post_for(id), id, strategy, v);
                if got != want {
                    return Err(format!("task {id} {strategy} {v}:\n{got}\n!=\n{want}"));
                }
                n += 1;
            }
        }
        let ex = exemplars_for(&task);
        let query = record("q", post_for(id), &task.classes[0], "qu");
        let v = VariantKey { part1: 0, part2: 2 };
        let fs = engine
            .build_few_shot(&query, &ex[..2], &task, Strategy::Mh, v, DEFAULT_TOKEN_BUDGET)
            .map_err(|e| e.to_string())?;
        let mut want: Vec<String> = ex[..2]
            .iter()
            .map(|(r, l)| format!("{}\nAnswer: {}", oracle_zero_shot(&r.text, id, Strategy::Mh, v), l.display()))
            .collect();
        want.push(oracle_zero_shot(post_for(id), id, Strategy::Mh, v));
        if fs.rendered != want.join("\n\n") {
            return Err(format!("task {id} few-shot differs"));
        }
        let cot = engine
            .build_cot(&query, &task, Strategy::Basic, VariantKey { part1: 0, part2: 0 })
            .map_err(|e| e.to_string())?;
        let want_cot = format!(
            "{}\n{}\n{}",
            post_for(id),
            oracle_questions(id)[0],
            oracle_constraint(id).replace("Only return", "Return").to_string() + " Provide reasons step by step."
        );
        if cot.rendered != want_cot {
            return Err(format!("task {id} CoT differs:\n{}\n!=\n{want_cot}", cot.rendered));
        }
        n += 2;
    }
    Ok(n)
}

// ---- parser corpus -------------------------------------------------------

#[derive(serde::Deserialize)]
pub struct CorpusItem {
    pub text: String,
    pub task_id: mhbench::corpus::TaskId,
    pub expected_label_or_null: Option<String>,
}

pub fn parser_corpus() -> Vec<CorpusItem> {
    std::fs::read_to_string(PARSER_CORPUS)
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

// ---- synthetic datasets -------------------------------------------------

pub fn write_csv(path: &Path, rows: &[(String, String, String, String)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["id", "text", "label", "user_id"]).unwrap();
    for (id, text, label, user) in rows {
        w.write_record([id, text, label, user]).unwrap();
    }
    w.flush().unwrap();
}

/// A 200-record binary test file (100 per class), a small train file, and a
/// hidden-label mock that is right for 85 of each class's 100 ids.
pub fn hidden_label_fixture(dir: &Path, latency_ms: u64) -> PathBuf {
    let mut test = Vec::new();
    let mut labels = BTreeMap::new();
    let mut wrong = [0, 0];
    for i in 0..200 {
        let class = i % 2;
        let label = ["no", "yes"][class];
        let id = format!("t{i:03}");
        test.push((
            id.clone(),
            format!("synthetic post {i} about an ordinary week"),
            label.to_string(),
            format!("tu{i}"),
        ));
        let answer = if wrong[class] < 15 {
            wrong[class] += 1;
            ["Yes", "No"][class]
        } else {
            ["No", "Yes"][class]
        };
        labels.insert(id, answer.to_string());
    }
    let train: Vec<_> = (0..20)
        .map(|i| {
            (
                format!("r{i:02}"),
                format!("training post {i}"),
                ["no", "yes"][i % 2].to_string(),
                format!("ru{i}"),
            )
        })
        .collect();
    write_csv(&dir.join("train.csv"), &train);
    write_csv(&dir.join("test.csv"), &test);
    let mut mock = format!("latency_ms = {latency_ms}\n\n[rule]\nkind = \"hidden_label\"\n\n[rule.labels]\n");
    for (id, answer) in &labels {
        writeln!(mock, "{id} = \"{answer}\"").unwrap();
    }
    std::fs::write(dir.join("mock.toml"), mock).unwrap();
    let config = "\
output_dir = \"out\"
modes = [\"zero_shot\"]
strategies = [\"basic\"]
concurrency = 2

[[datasets]]
name = \"synthetic\"
train_path = \"train.csv\"
test_path = \"test.csv\"
task = 1
schema = { id = \"id\" }

[[models]]
name = \"planted\"
mock = \"mock.toml\"
";
    let path = dir.join("experiment.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// A mixed-class dataset for the full matrix, with a keyword mock.
pub fn matrix_fixture(dir: &Path, concurrency: usize) -> PathBuf {
    let words = ["deadline", "exam", "holiday", "garden", "rent", "family", "music", "overtime"];
    let rows: Vec<_> = (0..120)
        .map(|i| {
            let w = words[i % words.len()];
            let label = if matches!(w, "deadline" | "exam" | "rent" | "overtime") { "yes" } else { "no" };
            // every 7th post has a misleading label
            let label = if i % 7 == 0 { if label == "yes" { "no" } else { "yes" } } else { label };
            (
                format!("m{i:03}"),
                format!("post {i}: thinking about my {w} again today"),
                label.to_string(),
                format!("mu{}", i / 3),
            )
        })
        .collect();
    write_csv(&dir.join("matrix.csv"), &rows);
    std::fs::write(
        dir.join("keyword.toml"),
        "[rule]\nkind = \"keyword\"\ndefault = \"No.\"\n\n[[rule.rules]]\ncontains = \"deadline\"\nresponse = \"Yes\"\n\n[[rule.rules]]\ncontains = \"exam\"\nresponse = \"Answer: yes\"\n\n[[rule.rules]]\ncontains = \"rent\"\nresponse = \"Yes. Money worries are a common stressor.\"\n\n[[rule.rules]]\ncontains = \"music\"\nresponse = \"I cannot tell.\"\n",
    )
    .unwrap();
    let config = format!(
        "\
output_dir = \"out-c{concurrency}\"
modes = [\"zero_shot\", \"few_shot\", \"cot\"]
concurrency = {concurrency}

[few_shot]
repeats = 2
seed = 5

[[datasets]]
name = \"matrix\"
path = \"matrix.csv\"
task = 1
schema = {{ id = \"id\" }}

[[models]]
name = \"kw\"
mock = \"keyword.toml\"
"
    );
    let path = dir.join(format!("matrix-c{concurrency}.toml"));
    std::fs::write(&path, config).unwrap();
    path
}

// ---- Table 2 sized splits ----------------------------------------------

/// (name, task, train size, test size) of the four finetuning datasets.
pub const TABLE2: [(&str, u8, usize, usize); 4] = [
    ("dreaddit", 1, 2838, 715),
    ("depseverity", 2, 2842, 711),
    ("sdcnl", 4, 1516, 379),
    ("cssrs", 5, 400, 100),
];

/// Records with `counts[k]` items of class `k`, interleaved, one user each.
pub fn labeled_records(prefix: &str, task: &TaskSpec, counts: &[usize]) -> Vec<Record> {
    let mut left = counts.to_vec();
    let mut out = Vec::new();
    let mut i = 0;
    while left.iter().any(|&c| c > 0) {
        for k in 0..left.len() {
            if left[k] > 0 {
                left[k] -= 1;
                out.push(record(
                    &format!("{prefix}-{i}"),
                    &format!("{prefix} post {i} with some words"),
                    &task.classes[k],
                    &format!("{prefix}-u{i}"),
                ));
                i += 1;
            }
        }
    }
    out
}

pub fn table2_splits() -> (
    Vec<mhbench::finetune::ExportEntry>,
    BTreeMap<(String, mhbench::corpus::TaskId), mhbench::corpus::DatasetSplit>,
) {
    let mut entries = Vec::new();
    let mut splits = BTreeMap::new();
    for (name, task, train, test) in TABLE2 {
        let task = TaskSpec::builtin(task).unwrap();
        let (train_counts, test_counts) = if name == "dreaddit" {
            (vec![1351, 1487], vec![346, 369])
        } else {
            (vec![train * 3 / 5, train - train * 3 / 5], vec![test / 2, test - test / 2])
        };
        let train_records = labeled_records(&format!("{name}-train"), &task, &train_counts);
        let test_records = labeled_records(&format!("{name}-test"), &task, &test_counts);
        splits.insert(
            (name.to_string(), task.task_id.clone()),
            mhbench::corpus::DatasetSplit {
                train: train_records,
                test: test_records,
                seed: 0,
                ratio: 0.8,
            },
        );
        entries.push(mhbench::finetune::ExportEntry {
            source: name.to_string(),
            task,
        });
    }
    (entries, splits)
}

/// Checks counts, epochs and leakage of a four-dataset export at `fraction`.
pub fn check_table2_export(fraction: f64) -> Result<String, String> {
    use mhbench::finetune::{epochs_hint, export_manifest, export_pairs, ExportSpec, TrainPair};
    let (entries, splits) = table2_splits();
    let spec = ExportSpec::new(entries, fraction, 17).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let summary =
        export_pairs(&spec, &splits, &PromptEngine::default(), dir.path()).map_err(|e| e.to_string())?;
    let manifest = export_manifest(&spec, dir.path()).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(&summary.train_path).unwrap();
    let pairs: Vec<TrainPair> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let mut per_source: BTreeMap<String, usize> = BTreeMap::new();
    for p in &pairs {
        *per_source.entry(p.source.clone()).or_default() += 1;
    }
    let mut expected_total = 0;
    for (name, _, train, _) in TABLE2 {
        let want = (fraction * train as f64).round() as i64;
        let got = per_source.get(name).copied().unwrap_or(0) as i64;
        if (got - want).abs() > 1 {
            return Err(format!("{name}: {got} lines, expected {want}±1"));
        }
        expected_total += want;
    }
    if fraction == 1.0 && pairs.len() != 7596 {
        return Err(format!("{} lines, expected 7596", pairs.len()));
    }
    let want_epochs = (3.0 / fraction - 1e-9).ceil() as u32;
    if manifest.epochs_hint != want_epochs || epochs_hint(fraction, 3) != want_epochs {
        return Err(format!("epochs_hint {} != {want_epochs}", manifest.epochs_hint));
    }
    let test_ids: std::collections::HashSet<&str> =
        splits.values().flat_map(|s| s.test.iter().map(|r| r.id.as_str())).collect();
    let train_ids: std::collections::HashSet<&str> = pairs.iter().map(|p| p.record_id.as_str()).collect();
    let leaked = test_ids.intersection(&train_ids).count();
    if leaked > 0 {
        return Err(format!("{leaked} test ids in training file"));
    }
    let eval_lines = std::fs::read_to_string(&summary.eval_path).unwrap().lines().count();
    if eval_lines != 715 + 711 + 379 + 100 {
        return Err(format!("{eval_lines} eval lines"));
    }
    Ok(format!(
        "f={fraction}: {} lines (expected {expected_total}), epochs_hint {}",
        pairs.len(),
        manifest.epochs_hint
    ))
}
