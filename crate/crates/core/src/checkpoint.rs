//! Single-file checkpoints.
//!
//! Layout: 8-byte magic, format version (u32 LE), metadata length (u64 LE),
//! metadata as JSON, then every tensor listed in the metadata as f32 LE in
//! listing order. The metadata carries the full config, its hash, the seed,
//! the step count and the section of each tensor (`gsf_encoder`,
//! `fusion/<site>`, `text_encoder`, `duration_flow`, `acoustic_flow`,
//! `posterior`, `decoder`, `optimizer`).

use std::path::Path;

use serde::{Deserialize, Serialize};
use stylefusion_autodiff::{Adam, Mat, ParamStore};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::StyleFusionModel;

pub const MAGIC: &[u8; 8] = b"SFUSCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub section: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub clip_norm: Option<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub seed: u64,
    pub step: usize,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub store: ParamStore<f32>,
    pub adam: Option<Adam<f32>>,
}

/// `fusion/<site>` for fusion parameters, otherwise the first path
/// component.
pub fn section_of(name: &str) -> String {
    let mut parts = name.split('/');
    match (parts.next(), parts.next()) {
        (Some("fusion"), Some(site)) => format!("fusion/{site}"),
        (Some(first), _) => first.to_string(),
        _ => String::new(),
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(config: &RunConfig, store: ParamStore<f32>, adam: Option<Adam<f32>>, step: usize) -> Self {
        let mut tensors: Vec<TensorEntry> = store
            .iter()
            .map(|(name, m)| TensorEntry { name: name.to_string(), section: section_of(name), rows: m.rows(), cols: m.cols() })
            .collect();
        let optimizer = adam.as_ref().map(|a| {
            for (kind, mats) in [("m", &a.m), ("v", &a.v)] {
                for ((name, _), m) in store.iter().zip(mats.iter()) {
                    tensors.push(TensorEntry {
                        name: format!("optimizer/{kind}/{name}"),
                        section: "optimizer".into(),
                        rows: m.rows(),
                        cols: m.cols(),
                    });
                }
            }
            OptimizerMeta { step: a.step, lr: a.lr, beta1: a.beta1, beta2: a.beta2, eps: a.eps, clip_norm: a.clip_norm }
        });
        let meta = CheckpointMeta {
            format_version: FORMAT_VERSION,
            config: config.clone(),
            config_hash: config.hash(),
            seed: config.seed,
            step,
            tensors,
            optimizer,
        };
        Self { meta, store, adam }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(20 + meta.len() + 4 * self.store.num_scalars() * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        let mut push = |m: &Mat<f32>| {
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for (_, m) in self.store.iter() {
            push(m);
        }
        if let Some(a) = &self.adam {
            a.m.iter().chain(a.v.iter()).for_each(&mut push);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let meta_end = 20usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated metadata"))?;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..meta_end])?;
        meta.config.validate()?;
        let mut pos = meta_end;
        let mut store = ParamStore::new();
        let mut optim: Vec<Mat<f32>> = Vec::new();
        for t in &meta.tensors {
            let n = t.rows * t.cols;
            let end = pos.checked_add(4 * n).filter(|&e| e <= bytes.len()).ok_or_else(|| bad(format!("truncated tensor {}", t.name)))?;
            let data: Vec<f32> = bytes[pos..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            pos = end;
            let m = Mat::from_vec(t.rows, t.cols, data)?;
            if t.section == "optimizer" {
                optim.push(m);
            } else {
                store.add(t.name.clone(), m)?;
            }
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let adam = match &meta.optimizer {
            Some(o) => {
                if optim.len() != 2 * store.len() {
                    return Err(bad("optimizer state does not match the parameters"));
                }
                let v = optim.split_off(store.len());
                Some(Adam { lr: o.lr, beta1: o.beta1, beta2: o.beta2, eps: o.eps, clip_norm: o.clip_norm, step: o.step, m: optim, v })
            }
            None => None,
        };
        Ok(Self { meta, store, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model from the stored config and checks that every
    /// parameter is present with the expected shape.
    pub fn model(&self) -> Result<StyleFusionModel> {
        let (model, fresh) = StyleFusionModel::build::<f32>(&self.meta.config)?;
        if fresh.len() != self.store.len() {
            return Err(bad(format!("checkpoint has {} parameters, model expects {}", self.store.len(), fresh.len())));
        }
        for ((a, ma), (b, mb)) in fresh.iter().zip(self.store.iter()) {
            if a != b || ma.shape() != mb.shape() {
                return Err(bad(format!("parameter mismatch: expected {a} {:?}, found {b} {:?}", ma.shape(), mb.shape())));
            }
        }
        Ok(model)
    }

    /// Sections in first-appearance order.
    pub fn sections(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.meta.tensors {
            if !out.contains(&t.section) {
                out.push(t.section.clone());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_from_names() {
        assert_eq!(section_of("fusion/flow3/ffn1/w1"), "fusion/flow3");
        assert_eq!(section_of("gsf_encoder/prompt/embed"), "gsf_encoder");
        assert_eq!(section_of("decoder/out/b"), "decoder");
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nonsense bytes here!").is_err());
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&99u32.to_le_bytes());
        b.extend_from_slice(&0u64.to_le_bytes());
        assert!(Checkpoint::from_bytes(&b).unwrap_err().to_string().contains("version"));
    }
}
