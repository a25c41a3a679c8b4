use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One image in a manifest. `id` is the source case id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub id: String,
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: Label,
    pub split: Option<Split>,
    pub dataset: String,
    pub config_hash: String,
    #[serde(default)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetManifest {
    pub records: Vec<SliceRecord>,
}

/// SHA-256 of the TOML form of a configuration, truncated to 16 hex digits.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = toml::to_string(config)?;
    Ok(hex(&Sha256::digest(text.as_bytes()))[..16].to_owned())
}

impl DatasetManifest {
    pub fn new(records: Vec<SliceRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        Self::read(text.as_bytes())
    }

    fn read(reader: impl std::io::Read) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SliceRecord = serde_json::from_str(&line)
                .map_err(|e| Error::invalid(format!("manifest line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl()?.as_bytes())?;
        Ok(())
    }

    /// SHA-256 hex of the JSONL encoding.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_jsonl()?.as_bytes())))
    }

    pub fn resolve(&self, record: &SliceRecord, manifest_dir: &Path) -> PathBuf {
        if record.path.is_absolute() {
            record.path.clone()
        } else {
            manifest_dir.join(&record.path)
        }
    }

    /// Checks id uniqueness and that every image exists.
    pub fn validate(&self, manifest_dir: &Path) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate record id `{}`", r.id)));
            }
            let p = self.resolve(r, manifest_dir);
            if !p.exists() {
                return Err(Error::MissingArtifact(p));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.label).or_insert(0) += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> DatasetManifest {
        self.filter(|r| r.split == Some(split))
    }

    pub fn filter(&self, mut keep: impl FnMut(&SliceRecord) -> bool) -> DatasetManifest {
        Self::new(self.records.iter().filter(|r| keep(r)).cloned().collect())
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }
}

/// Fails with [`Error::SplitLeak`] if any case id appears in both manifests.
pub fn ensure_disjoint(a: &DatasetManifest, b: &DatasetManifest) -> Result<()> {
    let shared: Vec<String> = a.ids().intersection(&b.ids()).map(|s| s.to_string()).collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::SplitLeak(shared))
    }
}

/// Per-class record counts for each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

/// Seeded stratified assignment of cases to splits. Records beyond the
/// requested counts keep `split = None`. A case id never spans two splits.
pub fn split_manifest(manifest: &DatasetManifest, counts: SplitCounts, seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment: BTreeMap<&str, Option<Split>> = BTreeMap::new();
    for label in Label::ALL {
        // Unique case ids of this class, in first-seen order.
        let mut ids: Vec<&str> = Vec::new();
        for r in manifest.records.iter().filter(|r| r.label == label) {
            if !ids.contains(&r.id.as_str()) {
                ids.push(&r.id);
            }
        }
        if ids.len() < counts.total() {
            return Err(Error::InsufficientCases {
                label: label.to_string(),
                requested: counts.total(),
                available: ids.len(),
            });
        }
        ids.shuffle(&mut rng);
        for (i, id) in ids.into_iter().enumerate() {
            let split = if i < counts.train {
                Some(Split::Train)
            } else if i < counts.train + counts.val {
                Some(Split::Val)
            } else if i < counts.total() {
                Some(Split::Test)
            } else {
                None
            };
            if assignment.insert(id, split).is_some() {
                return Err(Error::invalid(format!("case `{id}` carries both labels")));
            }
        }
    }
    let records = manifest
        .records
        .iter()
        .map(|r| SliceRecord {
            split: assignment[r.id.as_str()],
            ..r.clone()
        })
        .collect();
    Ok(DatasetManifest::new(records))
}
