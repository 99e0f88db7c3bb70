//! Single-file checkpoints.
//!
//! Layout: the ASCII line `ltmx-ckpt-v1\n`, a little-endian `u64` byte length, a JSON
//! manifest of that length (architecture, training config, optimizer step, tensor
//! index), then raw little-endian `f64` data: parameters, followed by the Adam first
//! and second moments when the manifest says they are present.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{ExpertBundle, ModelConfig};
use super::train::{TrainConfig, TrainState};
use crate::error::{Error, Result};
use crate::nn::{Adam, ParamStore};

pub const CHECKPOINT_MAGIC: &str = "ltmx-ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    model: ModelConfig,
    train: TrainConfig,
    epochs_done: usize,
    optimizer_step: Option<u64>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub bundle: ExpertBundle,
    pub train_config: TrainConfig,
    pub state: Option<TrainState>,
}

fn push_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(bundle: &ExpertBundle, train: &TrainConfig, state: Option<&TrainState>) -> Result<Vec<u8>> {
    let manifest = Manifest {
        model: bundle.config.clone(),
        train: train.clone(),
        epochs_done: state.map_or(0, |s| s.epochs_done),
        optimizer_step: state.map(|s| s.optimizer.step),
        tensors: bundle
            .params
            .iter()
            .map(|(_, name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
    buf.push(b'\n');
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in bundle.params.tensors() {
        push_f64s(&mut buf, &t.data);
    }
    if let Some(s) = state {
        for m in &s.optimizer.m {
            push_f64s(&mut buf, m);
        }
        for v in &s.optimizer.v {
            push_f64s(&mut buf, v);
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let out = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("checkpoint", "truncated file"))?;
        self.pos += n;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let ctx = "checkpoint";
    let header = CHECKPOINT_MAGIC.len() + 1;
    if bytes.len() < header || &bytes[..header - 1] != CHECKPOINT_MAGIC.as_bytes() || bytes[header - 1] != b'\n' {
        return Err(Error::format(ctx, format!("missing `{CHECKPOINT_MAGIC}` header")));
    }
    let mut cur = Cursor {
        buf: bytes,
        pos: header,
    };
    let len = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let manifest: Manifest = serde_json::from_slice(cur.take(len)?)?;
    let mut bundle = ExpertBundle::new(manifest.model.clone())?;
    let layout: Vec<TensorEntry> = bundle
        .params
        .iter()
        .map(|(_, name, t)| TensorEntry {
            name: name.to_string(),
            shape: t.shape.clone(),
        })
        .collect();
    if layout != manifest.tensors {
        return Err(Error::format(
            ctx,
            "tensor index does not match the recorded architecture",
        ));
    }
    let mut loaded = ParamStore::new();
    for entry in &manifest.tensors {
        let n = entry.shape.iter().product();
        loaded.add(
            entry.name.clone(),
            crate::nn::Tensor {
                shape: entry.shape.clone(),
                data: cur.f64s(n)?,
            },
        );
    }
    bundle.params.load_values(&loaded)?;
    let state = match manifest.optimizer_step {
        Some(step) => {
            let mut optimizer = Adam::new(manifest.train.optimizer, &bundle.params);
            optimizer.step = step;
            for m in optimizer.m.iter_mut() {
                *m = cur.f64s(m.len())?;
            }
            for v in optimizer.v.iter_mut() {
                *v = cur.f64s(v.len())?;
            }
            Some(TrainState {
                optimizer,
                epochs_done: manifest.epochs_done,
            })
        }
        None => None,
    };
    if cur.pos != bytes.len() {
        return Err(Error::format(ctx, "trailing bytes after tensor data"));
    }
    Ok(Checkpoint {
        bundle,
        train_config: manifest.train,
        state,
    })
}

pub fn save_checkpoint(
    path: &Path,
    bundle: &ExpertBundle,
    train: &TrainConfig,
    state: Option<&TrainState>,
) -> Result<String> {
    let bytes = encode_checkpoint(bundle, train, state)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(bytes_hash(&bytes))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    decode_checkpoint(&std::fs::read(path)?)
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// SHA-256 of a checkpoint file's bytes.
pub fn checkpoint_hash(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    Ok(bytes_hash(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ModalityShape;

    fn bundle() -> ExpertBundle {
        let mut cfg = ModelConfig::new(
            3,
            vec![ModalityShape::Tabular {
                vocab_sizes: vec![4],
                numeric_fields: 2,
            }],
        );
        cfg.expert_hidden = 5;
        cfg.seed = 9;
        ExpertBundle::new(cfg).unwrap()
    }

    #[test]
    fn round_trip_preserves_parameters_and_state() {
        let b = bundle();
        let mut state = TrainState::fresh(&b, Default::default());
        state.epochs_done = 4;
        state.optimizer.step = 17;
        state.optimizer.m[0][0] = 0.25;
        state.optimizer.v[1][0] = 0.5;
        let bytes = encode_checkpoint(&b, &TrainConfig::default(), Some(&state)).unwrap();
        assert!(bytes.starts_with(b"ltmx-ckpt-v1\n"));
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.bundle.params.content_hash(), b.params.content_hash());
        assert_eq!(ck.state.unwrap(), state);
        assert_eq!(ck.train_config, TrainConfig::default());
    }

    #[test]
    fn damaged_files_are_rejected() {
        let b = bundle();
        let bytes = encode_checkpoint(&b, &TrainConfig::default(), None).unwrap();
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        assert!(decode_checkpoint(b"not-a-checkpoint\n").is_err());
    }

    #[test]
    fn file_hash_matches_saved_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        let b = bundle();
        let h = save_checkpoint(&path, &b, &TrainConfig::default(), None).unwrap();
        assert_eq!(checkpoint_hash(&path).unwrap(), h);
        assert!(load_checkpoint(&path).unwrap().state.is_none());
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
