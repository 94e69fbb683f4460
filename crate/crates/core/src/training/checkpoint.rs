//! Checkpoint files.
//!
//! Layout: the 8-byte magic `SOMNOCK1`, a little-endian `u64` header
//! length, a JSON header, then a blob of little-endian `f64` values. The
//! header carries the model config, standardization statistics, run
//! metadata and a tensor table of `{name, shape, offset, dtype}` where
//! `offset` counts bytes from the start of the blob. Parameters keep
//! their model names; Adam moments are stored as `adam.m.<name>` and
//! `adam.v.<name>`.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamState;
use crate::autodiff::Tensor;
use crate::data::StandardizationStats;
use crate::error::{Error, Result};
use crate::model::{init_parameters, Model, ModelConfig};

pub const MAGIC: &[u8; 8] = b"SOMNOCK1";
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Training epoch the parameters come from; 0 for the initialization.
    pub epoch: usize,
    pub val_acc: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub standardization: StandardizationStats,
    pub optimizer: AdamState,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    dtype: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    standardization: StandardizationStats,
    meta: CheckpointMeta,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

fn corrupt(path: &Path, message: impl Into<String>) -> Error {
    Error::Corruption {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

impl Checkpoint {
    /// Tensors in file order: parameters, then the non-empty moments.
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let entries = self.model.params().entries();
        let mut out: Vec<_> = entries
            .iter()
            .map(|e| (e.name.clone(), e.tensor.shape().to_vec(), e.tensor.data()))
            .collect();
        for (prefix, moments) in [("adam.m", &self.optimizer.m), ("adam.v", &self.optimizer.v)] {
            for (e, mom) in entries.iter().zip(moments) {
                if !mom.is_empty() {
                    out.push((format!("{prefix}.{}", e.name), e.tensor.shape().to_vec(), mom));
                }
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let mut offset = 0u64;
        let table = tensors
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                    offset,
                    dtype: DTYPE.into(),
                };
                offset += 8 * data.len() as u64;
                e
            })
            .collect();
        let header = Header {
            config: self.model.config().clone(),
            standardization: self.standardization,
            meta: self.meta.clone(),
            adam_step: self.optimizer.step,
            tensors: table,
        };
        let json = serde_json::to_vec(&header).map_err(|source| Error::Json {
            context: "serializing checkpoint header".into(),
            source,
        })?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &tensors {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Parses a checkpoint image. `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt(path, "missing SOMNOCK1 magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let blob_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| corrupt(path, format!("header of {header_len} bytes overruns the file")))?;
        let header: Header = serde_json::from_slice(&bytes[16..blob_start])
            .map_err(|e| corrupt(path, format!("unreadable header: {e}")))?;
        let blob = &bytes[blob_start..];

        let mut expected_offset = 0u64;
        let mut tensors = std::collections::HashMap::new();
        for t in &header.tensors {
            if t.dtype != DTYPE {
                return Err(corrupt(path, format!("{}: unsupported dtype {}", t.name, t.dtype)));
            }
            if t.offset != expected_offset {
                return Err(corrupt(path, format!("{}: offset {} breaks the packed layout", t.name, t.offset)));
            }
            let n: usize = t.shape.iter().product();
            let end = t.offset as usize + 8 * n;
            if end > blob.len() {
                return Err(corrupt(path, format!("{} runs past the end of the data ({} bytes)", t.name, blob.len())));
            }
            let data = blob[t.offset as usize..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            expected_offset = end as u64;
            if tensors.insert(t.name.as_str(), Tensor::new(t.shape.clone(), data)?).is_some() {
                return Err(corrupt(path, format!("duplicate tensor {}", t.name)));
            }
        }
        if expected_offset as usize != blob.len() {
            return Err(corrupt(
                path,
                format!("header describes {expected_offset} data bytes, file holds {}", blob.len()),
            ));
        }

        header.config.validate()?;
        let mut params = init_parameters(&header.config, 0)?;
        let mut optimizer = AdamState::new(&params);
        optimizer.step = header.adam_step;
        let mut used = 0;
        for i in 0..params.len() {
            let (name, kind, shape) = {
                let e = &params.entries()[i];
                (e.name.clone(), e.kind, e.tensor.shape().to_vec())
            };
            let fetch = |key: &str| -> Result<&Tensor> {
                let t = tensors
                    .get(key)
                    .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks tensor {key}")))?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::ConfigMismatch(format!(
                        "{key}: config implies shape {shape:?}, checkpoint holds {:?}",
                        t.shape()
                    )));
                }
                Ok(t)
            };
            *params.tensor_mut(i) = fetch(&name)?.clone();
            used += 1;
            if kind.trainable() {
                for (prefix, slot) in [("adam.m", &mut optimizer.m[i]), ("adam.v", &mut optimizer.v[i])] {
                    let key = format!("{prefix}.{name}");
                    if tensors.contains_key(key.as_str()) {
                        *slot = fetch(&key)?.data().to_vec();
                        used += 1;
                    }
                }
            }
        }
        if used != tensors.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {} tensors the config does not account for",
                tensors.len() - used
            )));
        }
        Ok(Self {
            model: Model::from_parts(header.config, params)?,
            standardization: header.standardization,
            optimizer,
            meta: header.meta,
        })
    }

    /// Writes to a sibling temporary file and renames it into place, so a
    /// failed save never leaves a partial checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        }
        let mut tmp = PathBuf::from(path);
        tmp.as_mut_os_string().push(".tmp");
        let ctx = || format!("writing {}", tmp.display());
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(&bytes).map_err(|e| Error::io(ctx(), e))?;
        f.sync_all().map_err(|e| Error::io(ctx(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming to {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Errors unless the checkpoint was built from `config`.
    pub fn ensure_config(&self, config: &ModelConfig) -> Result<()> {
        if self.model.config() != config {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint model config differs from the requested one:\n  checkpoint: {}\n  requested:  {}",
                serde_json::to_string(self.model.config()).unwrap_or_default(),
                serde_json::to_string(config).unwrap_or_default()
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = Model::new(ModelConfig::tiny(), 5).unwrap();
        let mut optimizer = AdamState::new(model.params());
        optimizer.step = 3;
        optimizer.m[0][0] = 0.125;
        Checkpoint {
            model,
            standardization: StandardizationStats { mean: 63.5, std: 7.25 },
            optimizer,
            meta: CheckpointMeta {
                epoch: 2,
                val_acc: Some(0.5),
                seed: 9,
            },
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes().unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 7, 15, 16, 40, bytes.len() / 2, bytes.len() - 1] {
            let r = Checkpoint::from_bytes(&bytes[..cut], Path::new("mem"));
            assert!(matches!(r, Err(Error::Corruption { .. })), "cut {cut}: {r:?}");
        }
    }

    #[test]
    fn trailing_bytes_are_corruption() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bytes, Path::new("mem")), Err(Error::Corruption { .. })));
    }

    #[test]
    fn other_config_is_a_mismatch() {
        let c = sample();
        let mut other = ModelConfig::tiny();
        other.d_ffn += 1;
        assert!(matches!(c.ensure_config(&other), Err(Error::ConfigMismatch(_))));
        c.ensure_config(&ModelConfig::tiny()).unwrap();
    }
}
