//! Scaled dot-product attention and the projection-parameter records that
//! fine-tuning targets.

use std::cell::RefCell;

use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::registry::{AttnKind, AttnRole, AttnTag, Registry};
use crate::model::LayerNorm;

/// `softmax(Q K^T / sqrt(d)) V` with Q: n x d, K: m x d, V: m x dv.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, d: usize) -> Result<Tensor> {
    let qs = q.shape();
    let ks = k.shape();
    if qs.len() != 2 || ks.len() != 2 || qs[1] != d || ks[1] != d {
        return Err(Error::Dim(format!(
            "attention: Q {qs:?} / K {ks:?} incompatible with d={d}"
        )));
    }
    let logits = q.matmul(&k.transpose()?)?.mul_scalar(1.0 / (d as f64).sqrt());
    let weights = logits.softmax_lastdim()?;
    weights.matmul(v)
}

/// One attention layer: the W_Q/W_K/W_V projection record plus its pre-norm.
///
/// Cross-attention keys/values read the text condition; self-attention reads
/// the music features themselves. The value projection supports a
/// multiplicative overlay, which is how mask training probes parameter
/// relevance without touching the weights.
pub struct AttentionLayer {
    pub layer_index: usize,
    pub kind: AttnKind,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// key/query output dimension
    pub d: usize,
    pub norm: LayerNorm,
    v_overlay: RefCell<Option<Tensor>>,
}

impl AttentionLayer {
    /// `feature_dim` is the music-feature width c of the layer; `kv_dim` is
    /// the input width of K/V (equal to `feature_dim` for self-attention,
    /// to the text width for cross-attention).
    pub fn new(
        layer_index: usize,
        kind: AttnKind,
        feature_dim: usize,
        kv_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = feature_dim;
        let bound_q = 1.0 / (feature_dim as f64).sqrt();
        let bound_kv = 1.0 / (kv_dim as f64).sqrt();
        AttentionLayer {
            layer_index,
            kind,
            w_q: Tensor::rand_uniform(&[feature_dim, d], bound_q, rng),
            w_k: Tensor::rand_uniform(&[kv_dim, d], bound_kv, rng),
            w_v: Tensor::rand_uniform(&[kv_dim, feature_dim], bound_kv, rng),
            d,
            norm: LayerNorm::new(feature_dim),
            v_overlay: RefCell::new(None),
        }
    }

    /// Install or clear a multiplicative mask on W_V.
    pub fn set_v_overlay(&self, overlay: Option<Tensor>) {
        if let Some(m) = &overlay {
            assert_eq!(m.shape(), self.w_v.shape(), "overlay shape mismatch");
        }
        *self.v_overlay.borrow_mut() = overlay;
    }

    pub fn has_v_overlay(&self) -> bool {
        self.v_overlay.borrow().is_some()
    }

    /// Residual attention: `x + Attention(ln(x) W_Q, kv W_K, kv W_V)`.
    /// For self-attention pass the normalized features as `kv`; callers get
    /// that by leaving `kv` as `None`.
    pub fn forward(&self, x: &Tensor, kv: Option<&Tensor>) -> Result<Tensor> {
        let h = self.norm.forward(x)?;
        let source = match kv {
            Some(cond) => cond.clone(),
            None => h.clone(),
        };
        let q = h.matmul(&self.w_q)?;
        let k = source.matmul(&self.w_k)?;
        let effective_v = match self.v_overlay.borrow().as_ref() {
            Some(mask) => self.w_v.mul(mask)?,
            None => self.w_v.clone(),
        };
        let v = source.matmul(&effective_v)?;
        x.add(&attention(&q, &k, &v, self.d)?)
    }

    pub fn register(&self, registry: &mut Registry, prefix: &str) {
        let tag = |role| {
            Some(AttnTag {
                kind: self.kind,
                role,
                layer_index: self.layer_index,
            })
        };
        registry.register_tagged(&format!("{prefix}.w_q"), &self.w_q, tag(AttnRole::Query));
        registry.register_tagged(&format!("{prefix}.w_k"), &self.w_k, tag(AttnRole::Key));
        registry.register_tagged(&format!("{prefix}.w_v"), &self.w_v, tag(AttnRole::Value));
        self.norm.register(registry, &format!("{prefix}.norm"));
    }

    /// Register without kind/role tags. The text encoder uses this so its
    /// block never enters the U-Net attention filters.
    pub fn register_untagged(&self, registry: &mut Registry, prefix: &str) {
        registry.register(&format!("{prefix}.w_q"), &self.w_q);
        registry.register(&format!("{prefix}.w_k"), &self.w_k);
        registry.register(&format!("{prefix}.w_v"), &self.w_v);
        self.norm.register(registry, &format!("{prefix}.norm"));
    }
}
