//! Self-describing checkpoints: `model.ckpt` holds little-endian `f32` blobs,
//! `model.ckpt.json` the manifest (config, tensor names/shapes/offsets,
//! optimizer and schedule scalars).

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::config::ModelConfig;
use crate::nn::model::IoNext;
use crate::nn::params::{ParamRole, ParameterSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SCHEMA_VERSION: u32 = 1;

/// Adam state; moments are aligned with the parameter set (empty for buffers).
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moments: Vec<Vec<f32>>,
    pub second_moments: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub lr: f64,
    pub epochs_since_improvement: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[derive(Default)]
pub struct TrainingMeta {
    /// Last completed epoch (1-based; 0 for an untrained model).
    pub epoch: usize,
    /// `None` until a validation pass has run.
    pub best_val_loss: Option<f64>,
    pub rng_seed: u64,
    pub sample_rate_hz: Option<f64>,
    pub window_seconds: Option<f64>,
}


#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterSet<f32>,
    pub optimizer: Option<OptimizerState>,
    pub schedule: Option<ScheduleState>,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    role: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

#[derive(Serialize, Deserialize)]
struct OptimizerManifest {
    step: u64,
    moments: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    dtype: String,
    blob_bytes: u64,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerManifest>,
    schedule: Option<ScheduleState>,
    meta: TrainingMeta,
}

const FIRST_MOMENT: &str = "adam_first_moment";
const SECOND_MOMENT: &str = "adam_second_moment";

fn role_name(role: ParamRole) -> String {
    serde_json::to_value(role)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .expect("role serializes")
}

fn parse_role(name: &str) -> Result<ParamRole> {
    serde_json::from_value(serde_json::Value::String(name.to_owned()))
        .map_err(|_| Error::Checkpoint(format!("unknown tensor role {name}")))
}

/// Path of the manifest belonging to a blob path (`x.ckpt` → `x.ckpt.json`).
pub fn manifest_path(blob: &Path) -> PathBuf {
    let mut s = blob.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl Checkpoint {
    /// Snapshot of a model's parameters converted to `f32`.
    pub fn from_model<S: Scalar>(model: &IoNext<S>, meta: TrainingMeta) -> Self {
        Self {
            config: model.config().clone(),
            params: model.params().cast(),
            optimizer: None,
            schedule: None,
            meta,
        }
    }

    pub fn model<S: Scalar>(&self) -> Result<IoNext<S>> {
        IoNext::with_params(self.config.clone(), self.params.cast())
    }

    /// Whether the checkpoint carries everything needed to resume training.
    pub fn can_resume(&self) -> bool {
        self.optimizer.is_some() && self.schedule.is_some()
    }
}

fn push_blob(blob: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(ckpt.params.len());
    for (name, p) in ckpt.params.iter() {
        let offset = blob.len() as u64;
        push_blob(&mut blob, p.tensor.data());
        tensors.push(TensorEntry {
            name: name.to_owned(),
            role: role_name(p.role),
            shape: p.tensor.shape().to_vec(),
            offset,
            nbytes: blob.len() as u64 - offset,
        });
    }
    let optimizer = match &ckpt.optimizer {
        Some(opt) => {
            if opt.first_moments.len() != ckpt.params.len()
                || opt.second_moments.len() != ckpt.params.len()
            {
                return Err(Error::Checkpoint(
                    "optimizer moments not aligned with parameters".into(),
                ));
            }
            let mut moments = Vec::new();
            for (kind, all) in [
                (FIRST_MOMENT, &opt.first_moments),
                (SECOND_MOMENT, &opt.second_moments),
            ] {
                for ((name, p), m) in ckpt.params.iter().zip(all.iter()) {
                    if !p.role.is_trainable() {
                        continue;
                    }
                    if m.len() != p.tensor.len() {
                        return Err(Error::Checkpoint(format!(
                            "moment for {name} has wrong length"
                        )));
                    }
                    let offset = blob.len() as u64;
                    push_blob(&mut blob, m);
                    moments.push(TensorEntry {
                        name: name.to_owned(),
                        role: kind.to_owned(),
                        shape: p.tensor.shape().to_vec(),
                        offset,
                        nbytes: blob.len() as u64 - offset,
                    });
                }
            }
            Some(OptimizerManifest {
                step: opt.step,
                moments,
            })
        }
        None => None,
    };
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        dtype: "f32".into(),
        blob_bytes: blob.len() as u64,
        config: ckpt.config.clone(),
        tensors,
        optimizer,
        schedule: ckpt.schedule.clone(),
        meta: ckpt.meta.clone(),
    };
    let json =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &blob).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

fn read_tensor(blob: &[u8], entry: &TensorEntry) -> Result<Vec<f32>> {
    let start = entry.offset as usize;
    let end = start + entry.nbytes as usize;
    let bytes = blob
        .get(start..end)
        .ok_or_else(|| Error::Checkpoint(format!("tensor {} lies outside the blob", entry.name)))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let probe: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
    let version = probe.get("schema_version").and_then(|v| v.as_u64());
    if version != Some(u64::from(SCHEMA_VERSION)) {
        return Err(Error::Checkpoint(format!(
            "schema version {version:?} does not match supported version {SCHEMA_VERSION}"
        )));
    }
    let manifest: Manifest = serde_json::from_value(probe)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if manifest.dtype != "f32" {
        return Err(Error::Checkpoint(format!(
            "unsupported dtype {}",
            manifest.dtype
        )));
    }
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    if blob.len() as u64 != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "blob is {} bytes but manifest expects {} (truncated or corrupt)",
            blob.len(),
            manifest.blob_bytes
        )));
    }

    let mut spans: Vec<(u64, u64, &str)> = Vec::new();
    let moment_entries = manifest
        .optimizer
        .as_ref()
        .map(|o| o.moments.as_slice())
        .unwrap_or(&[]);
    for e in manifest.tensors.iter().chain(moment_entries) {
        let want = 4 * e.shape.iter().product::<usize>() as u64;
        if e.nbytes != want {
            return Err(Error::Checkpoint(format!(
                "tensor {} has {} bytes, shape needs {want}",
                e.name, e.nbytes
            )));
        }
        spans.push((e.offset, e.nbytes, &e.name));
    }
    spans.sort_unstable();
    let mut cursor = 0u64;
    for (offset, nbytes, name) in &spans {
        if *offset != cursor {
            return Err(Error::Checkpoint(format!(
                "tensor {name} at offset {offset}, expected {cursor} (gap or overlap)"
            )));
        }
        cursor += nbytes;
    }
    if cursor != manifest.blob_bytes {
        return Err(Error::Checkpoint(format!(
            "manifest covers {cursor} of {} blob bytes",
            manifest.blob_bytes
        )));
    }

    let mut params = ParameterSet::new();
    for e in &manifest.tensors {
        let data = read_tensor(&blob, e)?;
        params
            .insert(
                e.name.clone(),
                parse_role(&e.role)?,
                Tensor::from_vec(&e.shape, data)?,
            )
            .map_err(|err| Error::Checkpoint(err.to_string()))?;
    }

    let optimizer = match &manifest.optimizer {
        Some(opt) => {
            let mut first = vec![Vec::new(); params.len()];
            let mut second = vec![Vec::new(); params.len()];
            let mut seen = HashSet::new();
            for e in &opt.moments {
                let id = params.id(&e.name).ok_or_else(|| {
                    Error::Checkpoint(format!("moment for unknown tensor {}", e.name))
                })?;
                if params.param(id).tensor.shape() != e.shape.as_slice() {
                    return Err(Error::Checkpoint(format!(
                        "moment shape mismatch for {}",
                        e.name
                    )));
                }
                let slot = match e.role.as_str() {
                    FIRST_MOMENT => &mut first,
                    SECOND_MOMENT => &mut second,
                    other => return Err(Error::Checkpoint(format!("unknown moment kind {other}"))),
                };
                if !seen.insert((e.role.clone(), e.name.clone())) {
                    return Err(Error::Checkpoint(format!(
                        "duplicate moment for {}",
                        e.name
                    )));
                }
                slot[id.index()] = read_tensor(&blob, e)?;
            }
            for (i, (_, p)) in params.iter().enumerate() {
                if p.role.is_trainable()
                    && (first[i].len() != p.tensor.len() || second[i].len() != p.tensor.len())
                {
                    return Err(Error::Checkpoint("optimizer state incomplete".into()));
                }
            }
            Some(OptimizerState {
                step: opt.step,
                first_moments: first,
                second_moments: second,
            })
        }
        None => None,
    };

    Ok(Checkpoint {
        config: manifest.config,
        params,
        optimizer,
        schedule: manifest.schedule,
        meta: manifest.meta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_checkpoint(with_opt: bool) -> Checkpoint {
        let model = IoNext::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut ckpt = Checkpoint::from_model(
            &model,
            TrainingMeta {
                epoch: 4,
                ..Default::default()
            },
        );
        if with_opt {
            let moments: Vec<Vec<f32>> = ckpt
                .params
                .iter()
                .map(|(_, p)| {
                    if p.role.is_trainable() {
                        vec![0.25; p.tensor.len()]
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            ckpt.optimizer = Some(OptimizerState {
                step: 7,
                first_moments: moments.clone(),
                second_moments: moments,
            });
            ckpt.schedule = Some(ScheduleState {
                lr: 1e-4,
                epochs_since_improvement: 2,
            });
        }
        ckpt
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        let ckpt = tiny_checkpoint(true);
        save_checkpoint(&ckpt, &a).unwrap();
        let back = load_checkpoint(&a).unwrap();
        assert_eq!(back, ckpt);
        save_checkpoint(&back, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(
            fs::read(manifest_path(&a)).unwrap(),
            fs::read(manifest_path(&b)).unwrap()
        );
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_checkpoint(false), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 8]).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("truncated"), "{err}");
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_checkpoint(false), &p).unwrap();
        let mp = manifest_path(&p);
        let text = fs::read_to_string(&mp)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        fs::write(&mp, text).unwrap();
        assert!(load_checkpoint(&p)
            .unwrap_err()
            .to_string()
            .contains("schema version"));
    }

    #[test]
    fn missing_optimizer_state_is_inference_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_checkpoint(false), &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert!(!back.can_resume());
        back.model::<f32>().unwrap();
    }
}
