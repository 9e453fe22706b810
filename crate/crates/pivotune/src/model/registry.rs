//! Named enumeration of every trainable parameter.
//!
//! The registry is the addressing layer shared by the optimizer, the
//! checkpoint container, and pivotal-parameter selection: construction order
//! is fixed, names are unique, and attention projections carry kind/role
//! tags so callers can pick out, say, every self-attention value matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnKind {
    SelfAttn,
    CrossAttn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttnRole {
    Query,
    Key,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnTag {
    pub kind: AttnKind,
    pub role: AttnRole,
    pub layer_index: usize,
}

#[derive(Clone)]
pub struct ParamEntry {
    pub path: String,
    pub tensor: Tensor,
    /// Set only for U-Net attention projections; the text encoder registers
    /// as plain parameters so it never enters the pivotal target set.
    pub attn: Option<AttnTag>,
}

#[derive(Default)]
pub struct Registry {
    entries: Vec<ParamEntry>,
    by_path: HashMap<String, usize>,
}

impl Registry {
    pub fn new() -> Self {
        Registry::default()
    }

    pub fn register(&mut self, path: &str, tensor: &Tensor) {
        self.register_tagged(path, tensor, None);
    }

    pub fn register_tagged(&mut self, path: &str, tensor: &Tensor, attn: Option<AttnTag>) {
        assert!(
            !self.by_path.contains_key(path),
            "registry path collision: {path}"
        );
        self.by_path.insert(path.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            path: path.to_string(),
            tensor: tensor.clone(),
            attn,
        });
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.path.as_str())
    }

    pub fn get(&self, path: &str) -> Result<&ParamEntry> {
        self.by_path
            .get(path)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::Usage(format!("unknown parameter path `{path}`")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.by_path.contains_key(path)
    }

    /// Attention projections matching a kind/role filter, in registry order.
    pub fn attn_params(&self, kind: AttnKind, role: AttnRole) -> Vec<&ParamEntry> {
        self.entries
            .iter()
            .filter(|e| {
                e.attn
                    .map(|tag| tag.kind == kind && tag.role == role)
                    .unwrap_or(false)
            })
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.numel()).sum()
    }

    pub fn set_all_requires_grad(&self, on: bool) {
        for e in &self.entries {
            e.tensor.set_requires_grad(on);
        }
    }
}
