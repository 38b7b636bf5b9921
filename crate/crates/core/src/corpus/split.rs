use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Record};

/// Train/test partition with whole users on each side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<Record>,
    pub test: Vec<Record>,
    pub seed: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitSide {
    Train,
    Test,
}

/// One line of a split manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifestEntry {
    pub id: String,
    pub split: SplitSide,
    pub seed: u64,
    pub ratio: f64,
}

/// Partitions records so that every user lands entirely in train or in test.
///
/// Users are shuffled with `seed` and assigned to train whole, in shuffled
/// order, until train holds at least `round(ratio * n)` records. Each side
/// keeps at least one user.
pub fn split_user_exclusive(records: &[Record], ratio: f64, seed: u64) -> Result<DatasetSplit, CorpusError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(CorpusError::BadRatio(ratio));
    }
    let mut users: Vec<&str> = Vec::new();
    let mut sizes: HashMap<&str, usize> = HashMap::new();
    for r in records {
        let size = sizes.entry(r.user_id.as_str()).or_insert(0);
        if *size == 0 {
            users.push(r.user_id.as_str());
        }
        *size += 1;
    }
    if users.len() < 2 {
        return Err(CorpusError::TooFewUsers(users.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    users.shuffle(&mut rng);

    let target = (ratio * records.len() as f64).round() as usize;
    let mut train_users = 0;
    let mut train_count = 0;
    for user in &users {
        if train_count >= target {
            break;
        }
        train_count += sizes[user];
        train_users += 1;
    }
    train_users = train_users.clamp(1, users.len() - 1);

    let in_train: HashMap<&str, bool> = users
        .iter()
        .enumerate()
        .map(|(i, u)| (*u, i < train_users))
        .collect();
    let (train, test): (Vec<Record>, Vec<Record>) = records
        .iter()
        .cloned()
        .partition(|r| in_train[r.user_id.as_str()]);
    Ok(DatasetSplit {
        train,
        test,
        seed,
        ratio,
    })
}

/// Class-stratified subsample of `round(fraction * n)` records.
///
/// Per-class quotas use largest-remainder apportionment (ties go to the lower
/// ordinal), so each class gets `floor` or `ceil` of its proportional share.
/// Selected records keep their input order.
pub fn downsample_train(train: &[Record], fraction: f64, seed: u64) -> Result<Vec<Record>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::BadFraction(fraction));
    }
    if fraction == 1.0 || train.is_empty() {
        return Ok(train.to_vec());
    }
    let mut target = (fraction * train.len() as f64).round() as usize;
    if target == 0 {
        log::warn!(
            "downsampling {} records at {fraction} yields 0; keeping 1 record",
            train.len()
        );
        target = 1;
    }

    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in train.iter().enumerate() {
        by_class.entry(r.label.ordinal).or_default().push(i);
    }
    let n = train.len() as f64;
    let mut quotas: Vec<(usize, usize, f64)> = by_class
        .iter()
        .map(|(&ordinal, idx)| {
            let exact = target as f64 * idx.len() as f64 / n;
            (ordinal, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = quotas.iter().map(|q| q.1).sum();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| quotas[b].2.total_cmp(&quotas[a].2).then(quotas[a].0.cmp(&quotas[b].0)));
    for &k in order.iter().take(target - assigned) {
        quotas[k].1 += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; train.len()];
    for (ordinal, quota, _) in quotas {
        let mut idx = by_class[&ordinal].clone();
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(quota) {
            keep[i] = true;
        }
    }
    Ok(train
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

impl DatasetSplit {
    pub fn manifest(&self) -> Vec<SplitManifestEntry> {
        let entry = |r: &Record, split| SplitManifestEntry {
            id: r.id.clone(),
            split,
            seed: self.seed,
            ratio: self.ratio,
        };
        self.train
            .iter()
            .map(|r| entry(r, SplitSide::Train))
            .chain(self.test.iter().map(|r| entry(r, SplitSide::Test)))
            .collect()
    }

    /// Rebuilds a split from a manifest. Records missing from the manifest
    /// are dropped with a warning.
    pub fn from_manifest(records: &[Record], manifest: &[SplitManifestEntry]) -> DatasetSplit {
        let sides: HashMap<&str, SplitSide> = manifest.iter().map(|e| (e.id.as_str(), e.split)).collect();
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in records {
            match sides.get(r.id.as_str()) {
                Some(SplitSide::Train) => train.push(r.clone()),
                Some(SplitSide::Test) => test.push(r.clone()),
                None => log::warn!("record {} is not in the split manifest", r.id),
            }
        }
        let (seed, ratio) = manifest.first().map(|e| (e.seed, e.ratio)).unwrap_or((0, 0.0));
        DatasetSplit {
            train,
            test,
            seed,
            ratio,
        }
    }
}

pub fn write_split_manifest(split: &DatasetSplit, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io)?);
    for entry in split.manifest() {
        let line = serde_json::to_string(&entry).expect("manifest entry serializes");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_split_manifest(path: &Path) -> Result<Vec<SplitManifestEntry>, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(File::open(path).map_err(io)?).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        entries.push(serde_json::from_str(&line).map_err(|e| CorpusError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(entries)
}
