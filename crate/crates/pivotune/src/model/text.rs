//! Deterministic toy text encoder: a learned token-embedding table with
//! positional rows and one self-attention block. Pretrained jointly with the
//! base model, then frozen during concept fine-tuning (concept identifier
//! rows live outside the table and stay trainable).

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::model::attention::AttentionLayer;
use crate::model::registry::{AttnKind, Registry};
use crate::model::LayerNorm;

/// Fixed vocabulary manifest. Index 0 is reserved for the learned
/// null-condition row used by the unconditional branch.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(words: &[&str]) -> Self {
        let words: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocab { words, index }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn lookup(&self, word: &str) -> Result<usize> {
        self.index
            .get(word)
            .copied()
            .ok_or_else(|| Error::UnknownToken(word.to_string()))
    }

    pub fn tokenize(&self, prompt: &str) -> Result<Vec<usize>> {
        prompt.split_whitespace().map(|w| self.lookup(w)).collect()
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }
}

/// A prompt after encoding: the token ids it came from plus the post-encoder
/// embedding matrix handed to cross-attention.
#[derive(Clone, Debug)]
pub struct TextCondition {
    pub tokens: Vec<usize>,
    /// `s x d_text`, where `s` counts base tokens plus any prepended
    /// concept identifier tokens.
    pub embeddings: Tensor,
    /// How many leading rows belong to concept identifier tokens.
    pub concept_rows: usize,
}

pub struct TextEncoder {
    vocab: Vocab,
    pub d_text: usize,
    pub max_len: usize,
    /// Row 0 is the null-condition embedding; row 1+i embeds vocab word i.
    pub table: Tensor,
    pub pos: Tensor,
    pub attn: AttentionLayer,
    pub out_norm: LayerNorm,
}

impl TextEncoder {
    pub fn new(vocab: Vocab, d_text: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Self {
        let rows = vocab.len() + 1;
        TextEncoder {
            vocab,
            d_text,
            max_len,
            table: Tensor::randn(&[rows, d_text], 0.02, rng),
            pos: Tensor::randn(&[max_len, d_text], 0.02, rng),
            // the text encoder's block is not a U-Net attention layer, so it
            // registers untagged and is invisible to pivotal selection
            attn: AttentionLayer::new(usize::MAX, AttnKind::SelfAttn, d_text, d_text, rng),
            out_norm: LayerNorm::new(d_text),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Encode an already-tokenized prompt. An empty prompt encodes the
    /// learned null-condition row, which is the unconditional branch.
    pub fn encode_tokens(&self, tokens: &[usize]) -> Result<TextCondition> {
        let embeddings = self.encode_rows(None, tokens)?;
        Ok(TextCondition {
            tokens: tokens.to_vec(),
            embeddings,
            concept_rows: 0,
        })
    }

    /// Tokenize and encode a whitespace-separated prompt.
    pub fn encode_text(&self, prompt: &str) -> Result<TextCondition> {
        let tokens = self.vocab.tokenize(prompt)?;
        self.encode_tokens(&tokens)
    }

    /// Shared encoder path: optional pre-assembled leading rows (concept
    /// identifier embeddings) followed by table lookups of `tokens`.
    pub fn encode_rows(&self, leading: Option<&Tensor>, tokens: &[usize]) -> Result<Tensor> {
        let base_ids: Vec<usize> = if tokens.is_empty() && leading.is_none() {
            vec![0] // null-condition row
        } else {
            tokens.iter().map(|&t| t + 1).collect()
        };
        let mut parts: Vec<Tensor> = Vec::new();
        if let Some(rows) = leading {
            if rows.shape()[1] != self.d_text {
                return Err(Error::Dim(format!(
                    "encode_rows: leading rows width {:?} vs d_text {}",
                    rows.shape(),
                    self.d_text
                )));
            }
            parts.push(rows.clone());
        }
        if !base_ids.is_empty() {
            parts.push(self.table.gather_rows(&base_ids)?);
        }
        let part_refs: Vec<&Tensor> = parts.iter().collect();
        let stacked = Tensor::concat_rows(&part_refs)?;
        let s = stacked.shape()[0];
        if s > self.max_len {
            return Err(Error::Dim(format!(
                "encode_rows: sequence of {s} tokens exceeds max_len {}",
                self.max_len
            )));
        }
        let with_pos = stacked.add(&self.pos.slice_rows(0, s)?)?;
        let mixed = self.attn.forward(&with_pos, None)?;
        self.out_norm.forward(&mixed)
    }

    pub fn register(&self, registry: &mut Registry) {
        registry.register("text.table", &self.table);
        registry.register("text.pos", &self.pos);
        self.attn.register_untagged(registry, "text.attn");
        self.out_norm.register(registry, "text.out_norm");
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> TextEncoder {
        let vocab = Vocab::new(&["bright", "mellow", "tones", "fast"]);
        let mut rng = crate::rng::stream(31, "text", 0);
        TextEncoder::new(vocab, 8, 12, &mut rng)
    }

    #[test]
    fn unknown_token_named_in_error() {
        let enc = encoder();
        let err = enc.encode_text("bright sparkly").unwrap_err();
        assert!(err.to_string().contains("sparkly"), "{err}");
    }

    #[test]
    fn empty_prompt_is_null_condition_of_length_one() {
        let enc = encoder();
        let cond = enc.encode_text("").unwrap();
        assert_eq!(cond.embeddings.shape(), vec![1, 8]);
        assert!(cond.tokens.is_empty());
    }

    #[test]
    fn row_count_matches_token_count() {
        let enc = encoder();
        let cond = enc.encode_text("bright tones fast mellow tones").unwrap();
        assert_eq!(cond.embeddings.shape(), vec![5, 8]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let enc = encoder();
        let a = enc.encode_text("bright tones").unwrap();
        let b = enc.encode_text("bright tones").unwrap();
        let av = a.embeddings.to_vec();
        let bv = b.embeddings.to_vec();
        assert_eq!(av.len(), bv.len());
        for (x, y) in av.iter().zip(&bv) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn over_length_prompt_rejected() {
        let enc = encoder();
        let prompt = ["tones"; 13].join(" ");
        assert!(matches!(enc.encode_text(&prompt), Err(Error::Dim(_))));
    }
}
