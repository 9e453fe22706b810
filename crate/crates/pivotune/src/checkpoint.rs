//! Checkpoint container: named f64 tensor sections, concept manifests,
//! pivotal selection bitmaps, and a config fingerprint, all little-endian
//! and hash-verified.
//!
//! Saving is deterministic (registry order, stated section order), so
//! save -> load -> save is byte-identical. Files are written to a temp path
//! and renamed, never leaving a partial checkpoint behind.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::{UNet, UNetConfig, Vocab};

const MAGIC: &[u8; 8] = b"PVTCKPT\x01";
pub const FORMAT_VERSION: u32 = 1;

// ---- primitive block encoding -------------------------------------------

pub fn write_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    write_u32(out, bytes.len() as u32);
    out.extend_from_slice(bytes);
}

pub fn write_str(out: &mut Vec<u8>, s: &str) {
    write_bytes(out, s.as_bytes());
}

/// Named tensor block: name, shape, raw little-endian f64 data.
pub fn write_tensor_block(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    write_str(out, name);
    write_u32(out, shape.len() as u32);
    for &d in shape {
        write_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("checkpoint: truncated block".to_string()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint: invalid utf-8 in name".to_string()))
    }

    pub fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn tensor_block(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let name = self.str()?;
        let ndim = self.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = self.f64_vec(numel)?;
        Ok((name, shape, data))
    }

    pub fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Write a single tensor to its own file (the latent file format).
pub fn save_tensor_file(path: &Path, name: &str, tensor: &Tensor) -> Result<()> {
    let mut out = Vec::new();
    write_tensor_block(&mut out, name, &tensor.shape(), &tensor.data());
    atomic_write(path, &out)
}

pub fn load_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    let (_, shape, data) = cur.tensor_block()?;
    Tensor::from_vec(&shape, data)
}

/// Write via temp file + rename so partial output is never visible.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

// ---- checkpoint ----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub unet_config: UNetConfig,
    pub vocab_words: Vec<String>,
    pub model_seed: u64,
    /// Canonical serialization of the run configuration that produced this
    /// checkpoint.
    pub config_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct ConceptRecord {
    pub name: String,
    pub concept_id: usize,
    pub family_id: usize,
    pub token_count: usize,
    pub embedding_shape: Vec<usize>,
    pub embedding_data: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SelectionRecord {
    pub path: String,
    pub entries: Vec<bool>,
}

impl SelectionRecord {
    pub fn selected_count(&self) -> usize {
        self.entries.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
    pub concepts: Vec<ConceptRecord>,
    pub selections: Vec<SelectionRecord>,
}

impl Checkpoint {
    /// Snapshot a model (and optional concept/selection artifacts) into a
    /// serializable container.
    pub fn from_model(model: &UNet, meta: CheckpointMeta) -> Self {
        let tensors = model
            .registry()
            .entries()
            .iter()
            .map(|e| (e.path.clone(), e.tensor.shape(), e.tensor.to_vec()))
            .collect();
        Checkpoint {
            meta,
            tensors,
            concepts: Vec::new(),
            selections: Vec::new(),
        }
    }

    /// Rebuild the model this checkpoint describes.
    pub fn build_model(&self) -> Result<UNet> {
        let words: Vec<&str> = self.meta.vocab_words.iter().map(|s| s.as_str()).collect();
        let vocab = Vocab::new(&words);
        let model = UNet::new(self.meta.unet_config.clone(), vocab, self.meta.model_seed)?;
        let registry = model.registry();
        if registry.entries().len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint: {} tensors vs {} registry entries",
                self.tensors.len(),
                registry.entries().len()
            )));
        }
        for (name, shape, data) in &self.tensors {
            let entry = registry
                .get(name)
                .map_err(|_| Error::Data(format!("checkpoint: unknown tensor `{name}`")))?;
            if entry.tensor.shape() != *shape {
                return Err(Error::Data(format!(
                    "checkpoint: tensor `{name}` shape {:?} vs model {:?}",
                    shape,
                    entry.tensor.shape()
                )));
            }
            entry.tensor.set_data(data);
        }
        Ok(model)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_u32(&mut out, FORMAT_VERSION);
        let meta_json = serde_json::to_string(&self.meta).expect("meta serializes");
        write_str(&mut out, &meta_json);

        write_u32(&mut out, self.tensors.len() as u32);
        for (name, shape, data) in &self.tensors {
            write_tensor_block(&mut out, name, shape, data);
        }

        write_u32(&mut out, self.concepts.len() as u32);
        for c in &self.concepts {
            write_str(&mut out, &c.name);
            write_u64(&mut out, c.concept_id as u64);
            write_u64(&mut out, c.family_id as u64);
            write_u64(&mut out, c.token_count as u64);
            write_tensor_block(&mut out, &c.name, &c.embedding_shape, &c.embedding_data);
        }

        write_u32(&mut out, self.selections.len() as u32);
        for s in &self.selections {
            write_str(&mut out, &s.path);
            write_u64(&mut out, s.entries.len() as u64);
            let mut packed = vec![0u8; s.entries.len().div_ceil(8)];
            for (i, &bit) in s.entries.iter().enumerate() {
                if bit {
                    packed[i / 8] |= 1 << (i % 8);
                }
            }
            out.extend_from_slice(&packed);
        }

        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 4 + 32 {
            return Err(Error::Data("checkpoint: file too short".to_string()));
        }
        let (payload, stored_hash) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(payload);
        if digest.as_slice() != stored_hash {
            return Err(Error::Data("checkpoint: content hash mismatch".to_string()));
        }
        if &payload[..8] != MAGIC {
            return Err(Error::Data("checkpoint: bad magic".to_string()));
        }
        let mut cur = Cursor::new(&payload[8..]);
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint: unsupported format version {version}"
            )));
        }
        let meta: CheckpointMeta = serde_json::from_str(&cur.str()?)
            .map_err(|e| Error::Data(format!("checkpoint: bad meta: {e}")))?;

        let n_tensors = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            tensors.push(cur.tensor_block()?);
        }

        let n_concepts = cur.u32()? as usize;
        let mut concepts = Vec::with_capacity(n_concepts);
        for _ in 0..n_concepts {
            let name = cur.str()?;
            let concept_id = cur.u64()? as usize;
            let family_id = cur.u64()? as usize;
            let token_count = cur.u64()? as usize;
            let (_, embedding_shape, embedding_data) = cur.tensor_block()?;
            concepts.push(ConceptRecord {
                name,
                concept_id,
                family_id,
                token_count,
                embedding_shape,
                embedding_data,
            });
        }

        let n_selections = cur.u32()? as usize;
        let mut selections = Vec::with_capacity(n_selections);
        for _ in 0..n_selections {
            let path = cur.str()?;
            let n_entries = cur.u64()? as usize;
            let packed = cur.take(n_entries.div_ceil(8))?;
            let entries = (0..n_entries)
                .map(|i| packed[i / 8] & (1 << (i % 8)) != 0)
                .collect();
            selections.push(SelectionRecord { path, entries });
        }
        if !cur.done() {
            return Err(Error::Data("checkpoint: trailing bytes".to_string()));
        }
        Ok(Checkpoint {
            meta,
            tensors,
            concepts,
            selections,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Data(format!("checkpoint {}: {e}", path.display())))?;
        Checkpoint::decode(&bytes)
    }

    /// Per-layer selection summary for inspection.
    pub fn selection_summary(&self) -> String {
        let mut out = String::new();
        for s in &self.selections {
            out.push_str(&format!(
                "{}: {} / {} entries selected\n",
                s.path,
                s.selected_count(),
                s.entries.len()
            ));
        }
        out
    }
}

/// SHA-256 over a set of named tensors, in the given order. Used to verify
/// freeze contracts bit-exactly.
pub fn hash_named_tensors<'a>(items: impl Iterator<Item = (&'a str, &'a Tensor)>) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for (name, tensor) in items {
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        for v in tensor.data().iter() {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().into()
}

/// Hash of every parameter in a model's registry.
pub fn hash_model(model: &UNet) -> [u8; 32] {
    hash_named_tensors(
        model
            .registry()
            .entries()
            .iter()
            .map(|e| (e.path.as_str(), &e.tensor)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{UNetConfig, Vocab};

    fn small_checkpoint() -> Checkpoint {
        let config = UNetConfig {
            latent_len: 8,
            latent_channels: 2,
            widths: vec![4, 6],
            d_text: 6,
            time_dim: 8,
            max_text_len: 8,
        };
        let vocab = Vocab::new(&["a", "b"]);
        let model = UNet::new(config.clone(), vocab, 3).unwrap();
        let meta = CheckpointMeta {
            unet_config: config,
            vocab_words: vec!["a".to_string(), "b".to_string()],
            model_seed: 3,
            config_fingerprint: "{}".to_string(),
        };
        let mut ckpt = Checkpoint::from_model(&model, meta);
        ckpt.concepts.push(ConceptRecord {
            name: "water-cup".to_string(),
            concept_id: 0,
            family_id: 9,
            token_count: 3,
            embedding_shape: vec![3, 6],
            embedding_data: vec![0.25; 18],
        });
        ckpt.selections.push(SelectionRecord {
            path: "unet.down0.self_attn.w_v".to_string(),
            entries: vec![true, false, true, false, false],
        });
        ckpt
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let ckpt = small_checkpoint();
        let bytes = ckpt.encode();
        let decoded = Checkpoint::decode(&bytes).unwrap();
        let bytes2 = decoded.encode();
        assert_eq!(bytes, bytes2);
    }

    #[test]
    fn corrupted_byte_fails_hash_check() {
        let mut bytes = small_checkpoint().encode();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let err = Checkpoint::decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("hash"), "{err}");
    }

    #[test]
    fn rebuilt_model_matches_parameters_bitwise() {
        let ckpt = small_checkpoint();
        let model = ckpt.build_model().unwrap();
        let again = Checkpoint::from_model(&model, ckpt.meta.clone());
        for ((n1, _, d1), (n2, _, d2)) in ckpt.tensors.iter().zip(&again.tensors) {
            assert_eq!(n1, n2);
            assert_eq!(d1.len(), d2.len());
            for (a, b) in d1.iter().zip(d2) {
                assert_eq!(a.to_bits(), b.to_bits(), "{n1}");
            }
        }
    }

    #[test]
    fn save_and_load_via_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = small_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(ckpt.encode(), loaded.encode());
        assert_eq!(loaded.selections[0].selected_count(), 2);
        assert!(loaded.selection_summary().contains("2 / 5"));
        assert!(!path.with_extension("tmp").exists());
    }

    #[test]
    fn tensor_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.lat");
        let t = Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 9.0, -0.125]).unwrap();
        save_tensor_file(&path, "clip", &t).unwrap();
        let back = load_tensor_file(&path).unwrap();
        assert_eq!(back.shape(), vec![2, 3]);
        assert_eq!(back.to_vec(), t.to_vec());
    }
}
