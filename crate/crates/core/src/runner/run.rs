use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::plan::{enumerate_cells, prepare_datasets, shots_for, Cell, PreparedDataset, RunPlan};
use super::report::{read_records, write_report, RenderedReport};
use super::{mix_seed, CellKey, RecordStatus, RunError, RunRecord, CACHE_DIR, PARTIAL_MARKER, PLAN_FILE, RECORDS_FILE};
use crate::backends::{
    self, Backend, CachedBackend, CompletionRequest, MockSpec, ResponseCache, CLASSIFY_MAX_TOKENS, COT_MAX_TOKENS,
};
use crate::corpus::{write_split_manifest, ClassLabel, Record};
use crate::finetune::{self, ExportEntry, ExportSpec, ExportSummary, TrainManifest};
use crate::parsing::parse_label;
use crate::prompt::{Mode, PromptEngine, PromptError, PromptPlan, StrategyCatalog};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Keep existing records and only run missing cells.
    pub resume: bool,
    /// Answer every model with this mock instead of its configured backend.
    pub mock: Option<MockSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub total_cells: usize,
    pub scored: usize,
    /// Cells skipped because an earlier run already scored them.
    pub resumed: usize,
    pub backend_errors: usize,
    pub aborted_lanes: Vec<String>,
    pub complete: bool,
    pub report: RenderedReport,
}

/// `<output_dir>/<first 16 hex digits of the config digest>`.
pub fn run_dir_for(config: &ExperimentConfig, mock: Option<&MockSpec>) -> Result<PathBuf, RunError> {
    let digest = config.digest(mock)?;
    Ok(config.output_dir.join(&digest[..16]))
}

pub(crate) fn load_catalog(config: &ExperimentConfig) -> Result<StrategyCatalog, RunError> {
    match &config.catalog {
        Some(p) => StrategyCatalog::load(p).map_err(|e| RunError::Config(format!("{}: {e}", p.display()))),
        None => Ok(StrategyCatalog::builtin()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(RunError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(RunError::io(path))
}

/// Class-balanced exemplar draw without replacement: classes take turns in a
/// shuffled order until `m` exemplars are chosen or the pool runs dry.
pub fn draw_exemplars(
    train: &[Record],
    classes: &[ClassLabel],
    m: usize,
    exclude: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<(Record, ClassLabel)> {
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes.len()];
    for (i, r) in train.iter().enumerate() {
        if r.id != exclude && r.label.ordinal < classes.len() {
            pools[r.label.ordinal].push(i);
        }
    }
    let mut order: Vec<usize> = (0..classes.len()).filter(|&k| !pools[k].is_empty()).collect();
    order.shuffle(rng);
    let mut quota = vec![0usize; classes.len()];
    let mut assigned = 0;
    while assigned < m {
        let mut progressed = false;
        for &k in &order {
            if assigned == m {
                break;
            }
            if quota[k] < pools[k].len() {
                quota[k] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    let mut picked: Vec<(Record, ClassLabel)> = Vec::with_capacity(m);
    for &k in &order {
        for &i in pools[k].choose_multiple(rng, quota[k]) {
            picked.push((train[i].clone(), classes[k].clone()));
        }
    }
    picked.shuffle(rng);
    picked
}

struct Lane {
    consecutive_failures: AtomicUsize,
    aborted: AtomicBool,
}

struct Executor<'a> {
    config: &'a ExperimentConfig,
    datasets: &'a [PreparedDataset],
    engine: &'a PromptEngine,
    backends: Vec<Arc<dyn Backend>>,
}

impl Executor<'_> {
    fn few_shot(&self, cell: &Cell, record: &Record) -> Result<(PromptPlan, Vec<String>), PromptError> {
        let d = &self.datasets[cell.dataset];
        let m = shots_for(self.config, &d.task);
        let seed = mix_seed(&[
            &self.config.few_shot.seed.to_string(),
            &cell.repeat.to_string(),
            &d.name,
            &record.id,
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = PromptError::NoExemplars;
        for _ in 0..self.config.few_shot.max_resamples {
            let exemplars = draw_exemplars(&d.split.train, &d.task.classes, m, &record.id, &mut rng);
            if exemplars.is_empty() {
                return Err(PromptError::NoExemplars);
            }
            match self.engine.build_few_shot(
                record,
                &exemplars,
                &d.task,
                cell.strategy,
                cell.variant,
                self.config.token_budget,
            ) {
                Ok(plan) => {
                    let ids = exemplars.iter().map(|(r, _)| r.id.clone()).collect();
                    return Ok((plan, ids));
                }
                Err(e @ PromptError::BudgetExceeded { .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }

    fn execute(&self, cell: &Cell) -> RunRecord {
        let d = &self.datasets[cell.dataset];
        let record = &d.split.test[cell.record];
        let model = &self.config.models[cell.model];
        let mut out = RunRecord {
            record_id: record.id.clone(),
            dataset: d.name.clone(),
            task: d.task.task_id.clone(),
            model: model.name.clone(),
            mode: cell.mode,
            strategy: cell.strategy,
            variant: cell.variant,
            repeat_index: cell.repeat,
            prompt_fingerprint: None,
            raw_response: None,
            pred: None,
            status: RecordStatus::PromptError,
            rule: None,
            matched_span: String::new(),
            gold: record.label.name.clone(),
            exemplars: Vec::new(),
            error: None,
        };
        let built = match cell.mode {
            Mode::ZeroShot => self.engine.build_zero_shot(record, &d.task, cell.strategy, cell.variant),
            Mode::Cot => self.engine.build_cot(record, &d.task, cell.strategy, cell.variant),
            Mode::FewShot => self.few_shot(cell, record).map(|(plan, ids)| {
                out.exemplars = ids;
                plan
            }),
            Mode::Baseline => unreachable!("validated config"),
        };
        let plan = match built {
            Ok(p) => p,
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        };
        let default_cap = if cell.mode == Mode::Cot {
            COT_MAX_TOKENS
        } else {
            CLASSIFY_MAX_TOKENS
        };
        let request = CompletionRequest {
            prompt: &plan.rendered,
            max_tokens: model.max_output_tokens.unwrap_or(default_cap),
            record_id: Some(&record.id),
        };
        let backend = &self.backends[cell.model];
        out.prompt_fingerprint = Some(backend.fingerprint(&request));
        match backend.complete(&request) {
            Ok(response) => {
                let parsed = parse_label(&response.text, &d.task, self.engine.catalog());
                out.status = match parsed.status {
                    crate::parsing::ParseStatus::Parsed => RecordStatus::Parsed,
                    crate::parsing::ParseStatus::Unparseable => RecordStatus::Unparseable,
                    crate::parsing::ParseStatus::Ambiguous => RecordStatus::Ambiguous,
                };
                out.pred = parsed.label.map(|l| l.name);
                out.rule = parsed.rule;
                out.matched_span = parsed.matched_span;
                out.raw_response = Some(response.text);
            }
            Err(e) => {
                out.status = RecordStatus::BackendError;
                out.error = Some(e.to_string());
            }
        }
        out
    }
}

/// Reads scored records left by an earlier run and rewrites the file with
/// only those, dropping backend failures, duplicates and a truncated tail.
fn compact_existing(path: &Path) -> Result<Vec<RunRecord>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut seen = HashSet::new();
    let kept: Vec<RunRecord> = read_records(path)?
        .into_iter()
        .filter(|r| r.status.is_scored() && seen.insert(r.cell_key()))
        .collect();
    let mut bytes = Vec::new();
    for r in &kept {
        serde_json::to_writer(&mut bytes, r).expect("record serializes");
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)?;
    Ok(kept)
}

pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RunOutcome, RunError> {
    let engine = PromptEngine::new(load_catalog(config)?);
    let datasets = prepare_datasets(config)?;
    let digest = config.digest(options.mock.as_ref())?;
    let run_dir = config.output_dir.join(&digest[..16]);
    fs::create_dir_all(run_dir.join("splits")).map_err(RunError::io(&run_dir))?;

    let plan = RunPlan::build(config, &datasets, &engine, &digest);
    write_atomic(
        &run_dir.join(PLAN_FILE),
        serde_json::to_string_pretty(&plan).expect("plan serializes").as_bytes(),
    )?;
    for d in &datasets {
        write_split_manifest(&d.split, &run_dir.join("splits").join(format!("{}.jsonl", d.name)))?;
    }
    let marker = run_dir.join(PARTIAL_MARKER);
    fs::write(&marker, "run in progress or interrupted\n").map_err(RunError::io(&marker))?;

    let records_path = run_dir.join(RECORDS_FILE);
    let existing = if options.resume {
        compact_existing(&records_path)?
    } else {
        File::create(&records_path).map_err(RunError::io(&records_path))?;
        Vec::new()
    };
    let done: HashSet<CellKey> = existing.iter().map(RunRecord::cell_key).collect();

    let cache = Arc::new(ResponseCache::new(run_dir.join(CACHE_DIR)).map_err(RunError::io(&run_dir))?);
    let mut clients: Vec<Arc<dyn Backend>> = Vec::new();
    for m in &config.models {
        let inner = backends::from_config(m, options.mock.as_ref()).map_err(RunError::Backend)?;
        clients.push(Arc::new(CachedBackend::new(inner, cache.clone())));
    }

    let cells = enumerate_cells(config, &datasets, &engine);
    let total_cells = cells.len();
    let todo: Vec<Cell> = cells
        .into_iter()
        .filter(|c| {
            let d = &datasets[c.dataset];
            !done.contains(&CellKey {
                dataset: d.name.clone(),
                record_id: d.split.test[c.record].id.clone(),
                model: config.models[c.model].name.clone(),
                mode: c.mode,
                strategy: c.strategy,
                variant: c.variant,
                repeat: c.repeat,
            })
        })
        .collect();
    log::info!(
        "run {}: {total_cells} cells, {} already scored, {} to go",
        run_dir.display(),
        done.len(),
        todo.len()
    );

    let executor = Executor {
        config,
        datasets: &datasets,
        engine: &engine,
        backends: clients,
    };
    let lanes: Vec<Lane> = config
        .models
        .iter()
        .map(|_| Lane {
            consecutive_failures: AtomicUsize::new(0),
            aborted: AtomicBool::new(false),
        })
        .collect();
    let next = AtomicUsize::new(0);
    let mut file = OpenOptions::new()
        .append(true)
        .open(&records_path)
        .map_err(RunError::io(&records_path))?;
    let mut scored_now = 0;
    let mut backend_errors = 0;
    let mut write_error = None;

    std::thread::scope(|s| {
        let (tx, rx) = mpsc::sync_channel::<RunRecord>(config.concurrency * 4);
        for _ in 0..config.concurrency.min(todo.len()) {
            let tx = tx.clone();
            let (todo, next, lanes, executor) = (&todo, &next, &lanes, &executor);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = todo.get(i) else { break };
                let lane = &lanes[cell.model];
                if lane.aborted.load(Ordering::SeqCst) {
                    continue;
                }
                let record = executor.execute(cell);
                if record.status == RecordStatus::BackendError {
                    let n = lane.consecutive_failures.fetch_add(1, Ordering::SeqCst) + 1;
                    if n >= config.max_consecutive_failures && !lane.aborted.swap(true, Ordering::SeqCst) {
                        log::error!(
                            "model {}: {n} consecutive backend failures; aborting its lane. Last: {}",
                            record.model,
                            record.error.as_deref().unwrap_or("")
                        );
                    }
                } else {
                    lane.consecutive_failures.store(0, Ordering::SeqCst);
                }
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let progress_every = (todo.len() / 20).max(1);
        for (n, record) in rx.iter().enumerate() {
            let mut line = serde_json::to_vec(&record).expect("record serializes");
            line.push(b'\n');
            if let Err(e) = file.write_all(&line) {
                write_error = Some(e);
                break;
            }
            if record.status.is_scored() {
                scored_now += 1;
            } else {
                backend_errors += 1;
            }
            if (n + 1) % progress_every == 0 {
                log::info!("{}/{} cells done", n + 1, todo.len());
            }
        }
        // Dropping the receiver makes remaining senders stop.
    });
    if let Some(e) = write_error {
        return Err(RunError::Io {
            path: records_path,
            source: e,
        });
    }
    file.sync_all().map_err(RunError::io(&records_path))?;

    let aborted_lanes: Vec<String> = config
        .models
        .iter()
        .zip(&lanes)
        .filter(|(_, l)| l.aborted.load(Ordering::SeqCst))
        .map(|(m, _)| m.name.clone())
        .collect();
    let scored = existing.len() + scored_now;
    let complete = scored == total_cells;
    if complete {
        fs::remove_file(&marker).map_err(RunError::io(&marker))?;
    } else {
        let mut note = format!("incomplete: {scored}/{total_cells} cells scored, {backend_errors} backend error(s)\n");
        if !aborted_lanes.is_empty() {
            note.push_str(&format!("aborted model lanes: {}\n", aborted_lanes.join(", ")));
        }
        fs::write(&marker, note).map_err(RunError::io(&marker))?;
    }
    let report = write_report(&run_dir)?;
    Ok(RunOutcome {
        run_dir,
        total_cells,
        scored,
        resumed: existing.len(),
        backend_errors,
        aborted_lanes,
        complete,
        report,
    })
}

/// Exports finetuning pairs and a manifest for the config's `[finetune]`
/// section into `out_dir`.
pub fn export_finetune(config: &ExperimentConfig, out_dir: &Path) -> Result<(ExportSummary, TrainManifest), RunError> {
    let ft = config.finetune.clone().unwrap_or_default();
    let engine = PromptEngine::new(load_catalog(config)?);
    let mut entries = Vec::new();
    let mut splits = BTreeMap::new();
    for d in prepare_datasets(config)? {
        if !ft.datasets.is_empty() && !ft.datasets.contains(&d.name) {
            continue;
        }
        entries.push(ExportEntry {
            source: d.name.clone(),
            task: d.task.clone(),
        });
        splits.insert((d.name, d.task.task_id), d.split);
    }
    let mut spec = ExportSpec::new(entries, ft.fraction, ft.seed)?;
    spec.policy = ft.policy;
    let summary = finetune::export_pairs(&spec, &splits, &engine, out_dir)?;
    let manifest = finetune::export_manifest(&spec, out_dir)?;
    Ok((summary, manifest))
}
