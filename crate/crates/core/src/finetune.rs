//! Instruction-finetuning data export.
//!
//! Each training pair is a zero-shot prompt rendered with one fixed variant
//! per task and the bare class name as the target. Several datasets can be
//! exported together; their pairs are shuffled into one file with a seeded
//! RNG. Test-split records become unlabeled prompts in a separate eval file.
//! A TOML manifest records training hyperparameters and SHA-256 digests of
//! both files so an external trainer can check what it was handed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{downsample_train, CorpusError, DatasetSplit, TaskId, TaskSpec};
use crate::prompt::{PromptEngine, PromptError, Strategy, VariantKey};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum FinetuneError {
    #[error("export spec lists no datasets")]
    EmptySpec,
    #[error("fraction must be in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("none of the requested datasets has a split available")]
    EmptyIntersection,
    #[error("record id {id:?} appears in both {first} and {second}")]
    DuplicateRecord { id: String, first: String, second: String },
    #[error("{count} training record(s) also appear in a test split, e.g. {example:?}")]
    Leakage { count: usize, example: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing export file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: digest {actual} does not match manifest {expected}")]
    DigestMismatch { file: String, expected: String, actual: String },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FinetuneError + '_ {
    move |source| FinetuneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Prompt variant used for every pair. Defaults to the combined strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantPolicy {
    pub strategy: Strategy,
    #[serde(default = "VariantPolicy::default_part1")]
    pub part1_index: usize,
    #[serde(default)]
    pub part2_index: usize,
}

impl VariantPolicy {
    fn default_part1() -> usize {
        1
    }

    pub fn variant(&self) -> VariantKey {
        VariantKey {
            part1: self.part1_index,
            part2: self.part2_index,
        }
    }
}

impl Default for VariantPolicy {
    fn default() -> Self {
        VariantPolicy {
            strategy: Strategy::Both,
            part1_index: Self::default_part1(),
            part2_index: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub loss: String,
    pub epochs: u32,
    pub optimizer: String,
    pub learning_rate: f64,
    pub schedule: String,
    pub warmup_ratio: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            loss: "cross entropy".into(),
            epochs: 3,
            optimizer: "Adam".into(),
            learning_rate: 2e-5,
            schedule: "cosine".into(),
            warmup_ratio: 0.03,
        }
    }
}

/// One member of the export set: a named dataset bound to a task.
#[derive(Debug, Clone, PartialEq)]
pub struct ExportEntry {
    pub source: String,
    pub task: TaskSpec,
}

impl ExportEntry {
    fn key(&self) -> (String, TaskId) {
        (self.source.clone(), self.task.task_id.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSpec {
    pub entries: Vec<ExportEntry>,
    pub policy: VariantPolicy,
    pub fraction: f64,
    pub seed: u64,
    pub epochs_hint: u32,
    pub hyperparams: Hyperparams,
}

/// Epochs that keep total exposure comparable when training on a fraction.
pub fn epochs_hint(fraction: f64, base_epochs: u32) -> u32 {
    // slack absorbs 3 / 0.1 = 30.000000000000004
    (base_epochs as f64 / fraction - 1e-9).ceil() as u32
}

impl ExportSpec {
    pub fn new(entries: Vec<ExportEntry>, fraction: f64, seed: u64) -> Result<Self, FinetuneError> {
        let hyperparams = Hyperparams::default();
        let spec = ExportSpec {
            entries,
            policy: VariantPolicy::default(),
            fraction,
            seed,
            epochs_hint: 0,
            hyperparams,
        };
        spec.check()?;
        Ok(ExportSpec {
            epochs_hint: epochs_hint(fraction, spec.hyperparams.epochs),
            ..spec
        })
    }

    fn check(&self) -> Result<(), FinetuneError> {
        if self.entries.is_empty() {
            return Err(FinetuneError::EmptySpec);
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(FinetuneError::BadFraction(self.fraction));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub instruction: String,
    pub output: String,
    pub task_id: TaskId,
    pub source: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPrompt {
    pub instruction: String,
    pub task_id: TaskId,
    pub source: String,
    pub record_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCount {
    pub source: String,
    pub task_id: TaskId,
    pub train_available: usize,
    pub train_exported: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportSummary {
    pub train_path: PathBuf,
    pub eval_path: PathBuf,
    pub train_lines: usize,
    pub eval_lines: usize,
    pub sources: Vec<SourceCount>,
    pub epochs_hint: u32,
}

/// Per-source downsampling seed, so adding a dataset does not reshuffle others.
fn source_seed(seed: u64, source: &str, task: &TaskId) -> u64 {
    let digest = Sha256::digest(format!("{seed}\u{1f}{source}\u{1f}{task}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FinetuneError> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| FinetuneError::Manifest(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

/// Writes `train.jsonl` and `eval.jsonl` into `out_dir`.
///
/// Entries without a split in `splits` are skipped with a warning.
pub fn export_pairs(
    spec: &ExportSpec,
    splits: &BTreeMap<(String, TaskId), DatasetSplit>,
    engine: &PromptEngine,
    out_dir: &Path,
) -> Result<ExportSummary, FinetuneError> {
    spec.check()?;
    let available: Vec<(&ExportEntry, &DatasetSplit)> = spec
        .entries
        .iter()
        .filter_map(|e| match splits.get(&e.key()) {
            Some(s) => Some((e, s)),
            None => {
                log::warn!("no split for {} task {}; skipping", e.source, e.task.task_id);
                None
            }
        })
        .collect();
    if available.is_empty() {
        return Err(FinetuneError::EmptyIntersection);
    }

    // The same record may serve two tasks of one dataset, never two datasets.
    let mut owner: HashMap<&str, &str> = HashMap::new();
    let mut seen: HashSet<(&str, &TaskId)> = HashSet::new();
    for (entry, split) in &available {
        for r in split.train.iter().chain(&split.test) {
            if !seen.insert((&r.id, &entry.task.task_id)) {
                return Err(FinetuneError::DuplicateRecord {
                    id: r.id.clone(),
                    first: entry.source.clone(),
                    second: entry.source.clone(),
                });
            }
            match owner.get(r.id.as_str()) {
                Some(first) if *first != entry.source => {
                    return Err(FinetuneError::DuplicateRecord {
                        id: r.id.clone(),
                        first: first.to_string(),
                        second: entry.source.clone(),
                    })
                }
                _ => {
                    owner.insert(&r.id, &entry.source);
                }
            }
        }
    }

    let variant = spec.policy.variant();
    let mut pairs = Vec::new();
    let mut prompts = Vec::new();
    let mut sources = Vec::new();
    for (entry, split) in &available {
        let seed = source_seed(spec.seed, &entry.source, &entry.task.task_id);
        let train = downsample_train(&split.train, spec.fraction, seed)?;
        for r in &train {
            pairs.push(TrainPair {
                instruction: engine.render_zero_shot(&r.text, &entry.task, spec.policy.strategy, variant)?,
                output: r.label.display(),
                task_id: entry.task.task_id.clone(),
                source: entry.source.clone(),
                record_id: r.id.clone(),
            });
        }
        for r in &split.test {
            prompts.push(EvalPrompt {
                instruction: engine.render_zero_shot(&r.text, &entry.task, spec.policy.strategy, variant)?,
                task_id: entry.task.task_id.clone(),
                source: entry.source.clone(),
                record_id: r.id.clone(),
            });
        }
        sources.push(SourceCount {
            source: entry.source.clone(),
            task_id: entry.task.task_id.clone(),
            train_available: split.train.len(),
            train_exported: train.len(),
            test: split.test.len(),
        });
    }

    let test_ids: HashSet<&str> = prompts.iter().map(|p| p.record_id.as_str()).collect();
    let leaked: Vec<&str> = pairs
        .iter()
        .map(|p| p.record_id.as_str())
        .filter(|id| test_ids.contains(id))
        .collect();
    if let Some(example) = leaked.first() {
        return Err(FinetuneError::Leakage {
            count: leaked.len(),
            example: example.to_string(),
        });
    }

    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let train_path = out_dir.join(TRAIN_FILE);
    let eval_path = out_dir.join(EVAL_FILE);
    write_jsonl(&train_path, &pairs)?;
    write_jsonl(&eval_path, &prompts)?;
    log::info!(
        "exported {} training pairs and {} eval prompts to {}",
        pairs.len(),
        prompts.len(),
        out_dir.display()
    );
    Ok(ExportSummary {
        train_path,
        eval_path,
        train_lines: pairs.len(),
        eval_lines: prompts.len(),
        sources,
        epochs_hint: spec.epochs_hint,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileDigest {
    pub sha256: String,
    pub lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainManifest {
    pub loss: String,
    pub epochs: u32,
    pub optimizer: String,
    pub learning_rate: f64,
    pub schedule: String,
    pub warmup_ratio: f64,
    pub fraction: f64,
    pub epochs_hint: u32,
    pub seed: u64,
    pub strategy: Strategy,
    pub variant: String,
    pub sources: Vec<String>,
    pub digests: BTreeMap<String, FileDigest>,
}

fn digest_file(path: &Path) -> Result<FileDigest, FinetuneError> {
    let file = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FinetuneError::MissingFile(path.to_path_buf())
        } else {
            FinetuneError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let mut hasher = Sha256::new();
    let mut lines = 0;
    let mut reader = BufReader::new(file);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf);
        lines += 1;
    }
    Ok(FileDigest {
        sha256: hex::encode(hasher.finalize()),
        lines,
    })
}

/// Writes `manifest.toml` next to previously exported pair files.
pub fn export_manifest(spec: &ExportSpec, out_dir: &Path) -> Result<TrainManifest, FinetuneError> {
    let mut digests = BTreeMap::new();
    for name in [TRAIN_FILE, EVAL_FILE] {
        digests.insert(name.to_string(), digest_file(&out_dir.join(name))?);
    }
    let h = &spec.hyperparams;
    let manifest = TrainManifest {
        loss: h.loss.clone(),
        epochs: h.epochs,
        optimizer: h.optimizer.clone(),
        learning_rate: h.learning_rate,
        schedule: h.schedule.clone(),
        warmup_ratio: h.warmup_ratio,
        fraction: spec.fraction,
        epochs_hint: spec.epochs_hint,
        seed: spec.seed,
        strategy: spec.policy.strategy,
        variant: spec.policy.variant().to_string(),
        sources: spec
            .entries
            .iter()
            .map(|e| format!("{}:{}", e.source, e.task.task_id))
            .collect(),
        digests,
    };
    let text = toml::to_string(&manifest).map_err(|e| FinetuneError::Manifest(e.to_string()))?;
    let path = out_dir.join(MANIFEST_FILE);
    let mut file = fs::File::create(&path).map_err(io_err(&path))?;
    file.write_all(text.as_bytes()).map_err(io_err(&path))?;
    verify_manifest(out_dir)
}

/// Re-reads the manifest and checks every recorded digest.
pub fn verify_manifest(out_dir: &Path) -> Result<TrainManifest, FinetuneError> {
    let path = out_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            FinetuneError::MissingFile(path.clone())
        } else {
            FinetuneError::Io {
                path: path.clone(),
                source: e,
            }
        }
    })?;
    let manifest: TrainManifest = toml::from_str(&text).map_err(|e| FinetuneError::Manifest(e.to_string()))?;
    for (name, expected) in &manifest.digests {
        let actual = digest_file(&out_dir.join(name))?;
        if actual.sha256 != expected.sha256 {
            return Err(FinetuneError::DigestMismatch {
                file: name.clone(),
                expected: expected.sha256.clone(),
                actual: actual.sha256,
            });
        }
    }
    Ok(manifest)
}
