//! Model file: `ATNF1`, a little-endian u64 manifest length, a JSON
//! manifest, then every tensor as little-endian f32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::ParamStore;
use crate::models::{Model, ModelSpec};
use crate::numerics::Tensor;
use crate::textpipe::Vocabulary;

pub const MAGIC: &[u8; 5] = b"ATNF1";

/// A trained model with everything needed to encode and label new text.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub vocab: Vocabulary,
    pub label_names: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    spec: ModelSpec,
    label_names: Vec<String>,
    vocab: Vocabulary,
    tensors: Vec<TensorEntry>,
    payload_bytes: usize,
}

impl Checkpoint {
    pub fn new(model: Model, vocab: Vocabulary, label_names: Vec<String>) -> Result<Self> {
        let ckpt = Self {
            model,
            vocab,
            label_names,
        };
        ckpt.check_consistent()?;
        Ok(ckpt)
    }

    fn check_consistent(&self) -> Result<()> {
        let spec = &self.model.spec;
        if self.vocab.len() != spec.vocab_size {
            return Err(Error::Manifest(format!(
                "vocabulary has {} entries but the model expects {}",
                self.vocab.len(),
                spec.vocab_size
            )));
        }
        if self.label_names.len() != spec.num_classes {
            return Err(Error::Manifest(format!(
                "{} label names for {} classes",
                self.label_names.len(),
                spec.num_classes
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::with_capacity(self.model.params.len());
        let mut offset = 0;
        for (name, t) in self.model.params.iter() {
            tensors.push(TensorEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.numel();
        }
        let manifest = Manifest {
            spec: self.model.spec.clone(),
            label_names: self.label_names.clone(),
            vocab: self.vocab.clone(),
            tensors,
            payload_bytes: offset,
        };
        let json =
            serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Manifest(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.model.params.iter() {
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        let rest = &bytes[MAGIC.len()..];
        let (len_bytes, rest) = rest
            .split_at_checked(8)
            .ok_or(Error::Truncated("manifest length"))?;
        let json_len = usize::try_from(u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")))
            .map_err(|_| Error::Truncated("manifest"))?;
        let (json, payload) = rest
            .split_at_checked(json_len)
            .ok_or(Error::Truncated("manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| Error::Manifest(e.to_string()))?;

        let mut expected = 0usize;
        for entry in &manifest.tensors {
            if entry.offset != expected {
                return Err(Error::Manifest(format!(
                    "tensor \"{}\" at offset {} but the previous tensor ends at {expected}",
                    entry.name, entry.offset
                )));
            }
            expected += 4 * entry.shape.iter().product::<usize>();
        }
        if manifest.payload_bytes != expected {
            return Err(Error::Manifest(format!(
                "payload_bytes is {} but the tensor table sums to {expected}",
                manifest.payload_bytes
            )));
        }
        if payload.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: payload.len(),
            });
        }

        let reference = Model::build(manifest.spec.clone())?;
        let want: Vec<(&str, &[usize])> = reference
            .params
            .iter()
            .map(|(n, t)| (n, t.shape()))
            .collect();
        let got: Vec<(&str, &[usize])> = manifest
            .tensors
            .iter()
            .map(|e| (e.name.as_str(), e.shape.as_slice()))
            .collect();
        if want != got {
            return Err(Error::Manifest(format!(
                "tensor table does not match a {} model of this spec",
                manifest.spec.kind
            )));
        }

        let mut params = ParamStore::new();
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let data = payload[entry.offset..entry.offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?)?;
        }
        let ckpt = Self {
            model: Model {
                spec: manifest.spec,
                params,
            },
            vocab: manifest.vocab,
            label_names: manifest.label_names,
        };
        ckpt.check_consistent()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
