//! Dataset manifest: a JSON object mapping each subject id to its record
//! file, label file and split. Paths are relative to the manifest's
//! directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::io::{load_record, save_record};
use super::record::SleepRecord;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split `{s}`; expected train, val or test"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub record: PathBuf,
    pub labels: PathBuf,
    pub split: Split,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub subjects: BTreeMap<String, ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            context: format!("parsing manifest {}", path.display()),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            context: "serializing manifest".into(),
            source,
        })?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn count(&self, split: Split) -> usize {
        self.subjects.values().filter(|e| e.split == split).count()
    }
}

/// Resolves a manifest argument that may name either the file or the
/// dataset directory holding it.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads every record of `split`, in subject-id order.
pub fn load_split(manifest: &Path, split: Split) -> Result<Vec<SleepRecord>> {
    let manifest = manifest_path(manifest);
    let base = manifest.parent().unwrap_or(Path::new("."));
    let m = Manifest::load(&manifest)?;
    m.subjects
        .iter()
        .filter(|(_, e)| e.split == split)
        .map(|(id, e)| load_record(id, &base.join(&e.record), &base.join(&e.labels)))
        .collect()
}

/// Train/val/test sizes for `n` records: a sixth each for validation and
/// test, the rest for training.
pub fn split_counts(n: usize) -> (usize, usize, usize) {
    let val = (n as f64 / 6.0).round() as usize;
    let test = val.min(n - val);
    (n - val - test, val, test)
}

/// Writes `records` under `dir` as `records/<id>.csv` and
/// `labels/<id>.csv` plus the manifest, assigning splits in order.
pub fn write_dataset(dir: &Path, records: &[SleepRecord]) -> Result<Manifest> {
    let (train, val, _) = split_counts(records.len());
    let mut manifest = Manifest::default();
    for (i, r) in records.iter().enumerate() {
        let split = if i < train {
            Split::Train
        } else if i < train + val {
            Split::Val
        } else {
            Split::Test
        };
        let entry = ManifestEntry {
            record: PathBuf::from("records").join(format!("{}.csv", r.subject_id)),
            labels: PathBuf::from("labels").join(format!("{}.csv", r.subject_id)),
            split,
        };
        save_record(r, &dir.join(&entry.record), &dir.join(&entry.labels))?;
        if manifest.subjects.insert(r.subject_id.clone(), entry).is_some() {
            return Err(Error::Data(format!("duplicate subject id {}", r.subject_id)));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    manifest.save(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synthesize_dataset, GenConfig};

    #[test]
    fn split_sizes() {
        assert_eq!(split_counts(96), (64, 16, 16));
        assert_eq!(split_counts(0), (0, 0, 0));
        assert_eq!(split_counts(1), (1, 0, 0));
        assert_eq!(split_counts(4), (2, 1, 1));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = synthesize_dataset(6, 2, &GenConfig::default()).unwrap();
        let m = write_dataset(dir.path(), &recs).unwrap();
        assert_eq!(m.count(Split::Train), 4);
        let train = load_split(dir.path(), Split::Train).unwrap();
        assert_eq!(train, recs[..4].to_vec());
        let test = load_split(&dir.path().join(MANIFEST_FILE), Split::Test).unwrap();
        assert_eq!(test, recs[5..].to_vec());
    }

    #[test]
    fn split_names_parse() {
        assert_eq!("val".parse::<Split>().unwrap(), Split::Val);
        assert!("dev".parse::<Split>().is_err());
    }
}
