//! Checkpoint file: magic, manifest length (u64 LE), JSON manifest, then a
//! little-endian f32 blob with per-tensor offsets listed in the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::ParamStore;
use super::model::{Model, ModelConfig, Vocab};
use super::tensor::Tensor;
use super::NeuralError;

const MAGIC: &[u8; 8] = b"ORFGCKPT";
pub const CHECKPOINT_VERSION: &str = "oracleforge-ckpt-1";

/// Training provenance stored with the parameters.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub phase: u8,
    pub epoch: usize,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub version: String,
    pub model: Model,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: String,
    config: ModelConfig,
    vocab: Vec<String>,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

impl ModelCheckpoint {
    /// Snapshot of `model`; parameters are rounded to binary32, the stored
    /// precision, so the snapshot equals what a reload yields.
    pub fn new(model: &Model, meta: TrainingMeta) -> Self {
        let mut model = model.clone();
        model.store.round_to_f32();
        ModelCheckpoint { version: CHECKPOINT_VERSION.to_string(), model, meta }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        let mut offset = 0;
        let mut tensors = Vec::new();
        for (name, t) in self.model.store.names.iter().zip(&self.model.store.tensors) {
            tensors.push(TensorEntry { name: name.clone(), shape: t.shape, offset });
            offset += t.len();
        }
        let manifest = Manifest {
            version: self.version.clone(),
            config: self.model.config.clone(),
            vocab: self.model.vocab.tokens().to_vec(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.model.store.tensors {
            for &x in &t.data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        let bad = |m: &str| NeuralError::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version `{}`", manifest.version)));
        }
        let blob = &bytes[16 + len..];
        let mut store = ParamStore::default();
        for t in &manifest.tensors {
            let n = t.shape[0] * t.shape[1];
            let raw = blob.get(4 * t.offset..4 * (t.offset + n)).ok_or_else(|| bad("truncated parameter blob"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            store.add(t.name.clone(), Tensor::from_vec(t.shape[0], t.shape[1], data));
        }
        let model = Model::from_parts(manifest.config, Vocab::from_tokens(manifest.vocab), store)?;
        Ok(ModelCheckpoint { version: manifest.version, model, meta: manifest.meta })
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", parent.display())))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        let bytes = fs::read(path).map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 of the serialized checkpoint, hex encoded.
    pub fn hash(&self) -> Result<String, NeuralError> {
        Ok(hex_digest(&self.to_bytes()?))
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
