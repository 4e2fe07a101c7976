use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::sequence::{load_sequence, sequence_dir, write_sequence, GroundTruthTrack, ImuSequence};
use super::synth::{synthesize, SyntheticSpec};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown split `{s}` (train, val, test)")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub split: Split,
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Synthesizes `train + val + test` sequences under `out_dir/<split>/<id>`
/// and writes `manifest.csv`. Sequence `i` (numbered across splits in that
/// order) uses seed `spec.rng_seed + i`.
pub fn generate_dataset(
    spec: &SyntheticSpec,
    counts: SplitCounts,
    out_dir: &Path,
) -> Result<Vec<ManifestRow>> {
    spec.validate()?;
    let plan = [
        (Split::Train, counts.train),
        (Split::Val, counts.val),
        (Split::Test, counts.test),
    ];
    let mut rows = Vec::new();
    let mut index = 0u64;
    for (split, n) in plan {
        fs::create_dir_all(out_dir.join(split.as_str())).map_err(|e| Error::io(out_dir, e))?;
        for _ in 0..n {
            let seed = spec.rng_seed.wrapping_add(index);
            let id = format!("seq_{index:04}");
            let (mut seq, gt) = synthesize(&SyntheticSpec {
                rng_seed: seed,
                ..spec.clone()
            })?;
            seq.id = id.clone();
            write_sequence(&sequence_dir(out_dir, split.as_str(), &id), &seq, &gt)?;
            rows.push(ManifestRow {
                id,
                split,
                duration_s: seq.duration(),
                seed,
            });
            index += 1;
        }
    }
    write_manifest(&out_dir.join(MANIFEST_FILE), &rows)?;
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::data(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e: csv::Error| Error::Row {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// A dataset directory with its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Self {
            root: root.to_path_buf(),
            rows: read_manifest(&root.join(MANIFEST_FILE))?,
        })
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.rows
            .iter()
            .filter(move |r| r.split == split)
            .map(|r| r.id.as_str())
    }

    pub fn load(&self, split: Split) -> Result<Vec<(ImuSequence, GroundTruthTrack)>> {
        self.ids(split)
            .map(|id| load_sequence(&sequence_dir(&self.root, split.as_str(), id)))
            .collect()
    }
}
