//! Alignment-score evaluation with a deterministic embedding stand-in.
//!
//! The audio embedder maps a latent clip to a unit vector: per-channel
//! spectral band energies, log-compressed, normalized, then a seeded fixed
//! projection. The text side embeds a prompt by rendering canonical clips
//! from the prompt's ground-truth attributes and averaging their audio
//! embeddings. Both are pure functions of the corpus seed.

use serde::Serialize;

use crate::autograd::Tensor;
use crate::benchdata::{self, generate_concept_clip, ConceptFamily, CorpusConfig, EvalPrompt, LatentCodec};
use crate::concepts::ConceptSpec;
use crate::diffusion::{sample, NoiseSchedule, SamplerConfig};
use crate::error::{Error, Result};
use crate::model::UNet;
use crate::rng;

/// Cosine similarity; rejects zero vectors and dimension mismatches.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dim(format!("cosine: {} vs {} dims", a.len(), b.len())));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine: zero vector".to_string()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Plain mean of a set of equal-length vectors.
pub fn centroid(embeddings: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = embeddings
        .first()
        .ok_or_else(|| Error::Usage("centroid of empty set".to_string()))?;
    let mut acc = vec![0.0; first.len()];
    for e in embeddings {
        if e.len() != first.len() {
            return Err(Error::Dim("centroid: ragged embeddings".to_string()));
        }
        for (a, v) in acc.iter_mut().zip(e) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= embeddings.len() as f64;
    }
    Ok(acc)
}

fn l2_normalize(v: &mut [f64]) -> Result<()> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric("embedding: zero feature vector".to_string()));
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

/// Deterministic audio/text embedding space tied to a corpus configuration.
pub struct EmbeddingSpace {
    pub dim: usize,
    bands: usize,
    latent_len: usize,
    channels: usize,
    /// dim x (channels * (bands + 1)) seeded Gaussian projection.
    projection: Vec<f64>,
    /// Per-feature mean and inverse spread over prototype renderings.
    /// Standardizing removes the component every clip shares and puts the
    /// attribute axes on comparable scales, so no single axis (register,
    /// brightness) swamps the others.
    baseline: Vec<f64>,
    inv_spread: Vec<f64>,
    codec: LatentCodec,
    corpus_seed: u64,
    samples_per_clip: usize,
    /// Clips averaged per prompt for the canonical text embedding.
    canonical_clips: usize,
}

impl EmbeddingSpace {
    pub fn new(config: &CorpusConfig) -> Self {
        let features = config.embed_bands + config.latent_channels;
        let mut r = rng::stream(config.seed, "embed-projection", 0);
        let mut space = EmbeddingSpace {
            dim: config.embed_dim,
            bands: config.embed_bands,
            latent_len: config.latent_len,
            channels: config.latent_channels,
            projection: rng::normal_vec(&mut r, config.embed_dim * features),
            baseline: vec![0.0; features],
            inv_spread: vec![1.0; features],
            codec: LatentCodec::new(config.latent_channels, config.seed),
            corpus_seed: config.seed,
            samples_per_clip: config.samples_per_clip(),
            canonical_clips: 8,
        };
        // calibrate per-feature statistics over every attribute/kind
        // prototype: the grand mean centers the features, and the
        // within-prototype spread (not the across-prototype spread) sets the
        // whitening scale, so strongly discriminative axes keep their full
        // signal-to-noise ratio
        const RENDERS_PER_PROTOTYPE: usize = 3;
        let mut groups: Vec<Vec<Vec<f64>>> = Vec::new();
        for combo in 0..16 {
            for kind in [benchdata::FamilyKind::Instrument, benchdata::FamilyKind::Genre] {
                let prototype =
                    ConceptFamily::prototype(benchdata::AttributeSet::from_index(combo), kind);
                let mut group = Vec::with_capacity(RENDERS_PER_PROTOTYPE);
                for k in 0..RENDERS_PER_PROTOTYPE {
                    let seed = rng::derive_seed(
                        config.seed,
                        "embed-baseline",
                        (combo * 10 + k) as u64 * 2 + (kind == benchdata::FamilyKind::Genre) as u64,
                    );
                    let wave = generate_concept_clip(&prototype, seed, space.samples_per_clip);
                    let latent = space.codec.encode(&wave).expect("baseline clip encodes");
                    group.push(space.raw_features(&latent).expect("baseline features"));
                }
                groups.push(group);
            }
        }
        let count: f64 = groups.iter().map(|g| g.len()).sum::<usize>() as f64;
        let mut mean = vec![0.0; features];
        for group in &groups {
            for raw in group {
                for (m, v) in mean.iter_mut().zip(raw) {
                    *m += v;
                }
            }
        }
        for m in mean.iter_mut() {
            *m /= count;
        }
        let mut total_var = vec![0.0; features];
        for group in &groups {
            for raw in group {
                for ((v, m), r) in total_var.iter_mut().zip(&mean).zip(raw) {
                    *v += (r - m) * (r - m);
                }
            }
        }
        let mut within_var = vec![0.0; features];
        for group in &groups {
            let n = group.len() as f64;
            let mut gmean = vec![0.0; features];
            for raw in group {
                for (m, v) in gmean.iter_mut().zip(raw) {
                    *m += v / n;
                }
            }
            for raw in group {
                for ((v, m), r) in within_var.iter_mut().zip(&gmean).zip(raw) {
                    *v += (r - m) * (r - m) / groups.len() as f64 / (n - 1.0);
                }
            }
        }
        space.inv_spread = within_var
            .iter()
            .zip(&total_var)
            .map(|(w, t)| {
                // blend in a sliver of total spread so features that were
                // flat across calibration cannot blow up on real clips
                1.0 / (w.sqrt() + 0.1 * (t / count).sqrt() + 1e-3)
            })
            .collect();
        space.baseline = mean;
        space
    }

    /// Spectral band profile of the decoded signal plus per-channel power
    /// fractions of the latent. Everything is expressed as a fraction of
    /// total power: exactly gain-invariant, with a relative floor so
    /// near-empty bands stay put on the log scale.
    fn raw_features(&self, latent: &Tensor) -> Result<Vec<f64>> {
        let shape = latent.shape();
        if shape.len() != 2 || shape[0] != self.latent_len || shape[1] != self.channels {
            return Err(Error::Dim(format!(
                "audio_embed: latent {:?} vs {}x{}",
                shape, self.latent_len, self.channels
            )));
        }
        // the codec is exactly invertible, so the decoded signal's spectrum
        // is alias-free where per-channel spectra of the latent are folded;
        // Welch averaging over windowed half-length segments tames the
        // interference texture a single periodogram would carry
        let wave = self.codec.decode(latent)?;
        let n_samples = wave.len();
        let seg_len = (n_samples / 4).max(8);
        let hop = seg_len / 2;
        let half = seg_len / 2;
        let band_edges: Vec<usize> = (0..=self.bands)
            .map(|b| {
                let hi = half as f64;
                hi.powf(b as f64 / self.bands as f64).round() as usize
            })
            .collect();
        let hann: Vec<f64> = (0..seg_len)
            .map(|n| {
                0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / seg_len as f64).cos()
            })
            .collect();
        let mut power = vec![0.0; half + 1];
        let mut seg_start = 0;
        while seg_start + seg_len <= n_samples {
            let segment: Vec<f64> = wave[seg_start..seg_start + seg_len]
                .iter()
                .zip(&hann)
                .map(|(v, w)| v * w)
                .collect();
            for k in 1..=half {
                let (mut re, mut im) = (0.0, 0.0);
                let w = std::f64::consts::TAU * k as f64 / seg_len as f64;
                let (step_cos, step_sin) = (w.cos(), w.sin());
                let (mut c, mut s) = (1.0, 0.0);
                for &v in &segment {
                    re += v * c;
                    im -= v * s;
                    let c2 = c * step_cos - s * step_sin;
                    s = c * step_sin + s * step_cos;
                    c = c2;
                }
                power[k] += (re * re + im * im) / seg_len as f64;
            }
            seg_start += hop;
        }
        let mut band_energy = vec![0.0; self.bands];
        for b in 0..self.bands {
            let (lo, hi) = (band_edges[b], band_edges[b + 1].max(band_edges[b] + 1));
            band_energy[b] = power[lo.min(half)..hi.min(half + 1).max(lo.min(half) + 1)]
                .iter()
                .sum();
        }
        let data = latent.data();
        let mut channel_power = vec![0.0; self.channels];
        for row in 0..self.latent_len {
            for ch in 0..self.channels {
                let v = data[row * self.channels + ch];
                channel_power[ch] += v * v;
            }
        }
        let band_total: f64 = band_energy.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let chan_total: f64 = channel_power.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        let mut features = Vec::with_capacity(self.bands + self.channels);
        for e in band_energy {
            features.push((e / band_total + 3e-4).ln());
        }
        for p in channel_power {
            features.push((p / chan_total + 3e-4).ln());
        }
        Ok(features)
    }

    /// Unit-norm embedding of a latent clip.
    pub fn audio_embed(&self, latent: &Tensor) -> Result<Vec<f64>> {
        let mut features = self.raw_features(latent)?;
        for ((v, b), s) in features.iter_mut().zip(&self.baseline).zip(&self.inv_spread) {
            *v = (*v - b) * s;
        }
        l2_normalize(&mut features)?;
        let f = features.len();
        let mut out = vec![0.0; self.dim];
        for (d, o) in out.iter_mut().enumerate() {
            let row = &self.projection[d * f..(d + 1) * f];
            *o = row.iter().zip(&features).map(|(p, x)| p * x).sum();
        }
        l2_normalize(&mut out)?;
        Ok(out)
    }

    /// Embed a prompt by rendering canonical clips of its ground-truth
    /// attributes and averaging their embeddings.
    pub fn text_embed(&self, prompt: &EvalPrompt) -> Result<Vec<f64>> {
        let prototype = ConceptFamily::prototype(prompt.attributes, prompt.kind);
        let mut embeddings = Vec::with_capacity(self.canonical_clips);
        for k in 0..self.canonical_clips {
            let seed = rng::derive_seed(self.corpus_seed, "canonical-render", (prompt.id * 1000 + k) as u64);
            let wave = generate_concept_clip(&prototype, seed, self.samples_per_clip);
            let latent = self.codec.encode(&wave)?;
            embeddings.push(self.audio_embed(&latent)?);
        }
        let mut mean = centroid(&embeddings)?;
        l2_normalize(&mut mean)?;
        Ok(mean)
    }
}

/// Mean over generated embeddings of cosine against the reference centroid.
pub fn audio_alignment_scores(generated: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Usage("audio alignment: empty clip set".to_string()));
    }
    let center = centroid(reference)?;
    let mut total = 0.0;
    for g in generated {
        total += cosine(g, &center)?;
    }
    Ok(total / generated.len() as f64)
}

/// Audio Alignment for latent clips against a concept's reference clips.
pub fn audio_alignment(
    generated: &[Tensor],
    reference: &[Tensor],
    space: &EmbeddingSpace,
) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Usage("audio alignment: empty clip set".to_string()));
    }
    let gen: Vec<Vec<f64>> = generated.iter().map(|t| space.audio_embed(t)).collect::<Result<_>>()?;
    let refs: Vec<Vec<f64>> = reference.iter().map(|t| space.audio_embed(t)).collect::<Result<_>>()?;
    audio_alignment_scores(&gen, &refs)
}

/// Cosine between the renormalized mean generated embedding and the prompt
/// embedding. The prompt must not carry concept identifier tokens.
pub fn text_alignment(
    generated: &[Tensor],
    prompt: &EvalPrompt,
    space: &EmbeddingSpace,
) -> Result<f64> {
    if prompt.text.contains('*') {
        return Err(Error::Usage(format!(
            "text alignment prompt must not contain concept tokens: `{}`",
            prompt.text
        )));
    }
    if generated.is_empty() {
        return Err(Error::Usage("text alignment: empty clip set".to_string()));
    }
    let embeddings: Vec<Vec<f64>> =
        generated.iter().map(|t| space.audio_embed(t)).collect::<Result<_>>()?;
    let mut mean = centroid(&embeddings)?;
    l2_normalize(&mut mean)?;
    cosine(&mean, &space.text_embed(prompt)?)
}

/// `|score_a - score_b|`; defined for exactly two concepts.
pub fn delta_audio_alignment(scores: &[(String, f64)]) -> Result<f64> {
    if scores.len() != 2 {
        return Err(Error::Usage(format!(
            "delta audio alignment needs exactly 2 concepts, got {}",
            scores.len()
        )));
    }
    Ok((scores[0].1 - scores[1].1).abs())
}

/// Single-concept protocol arithmetic: total clips generated by the full
/// evaluation grid.
pub fn protocol_clip_count(concepts: usize, prompts: usize, clips_per_cell: usize) -> usize {
    concepts * prompts * clips_per_cell
}

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentReport {
    /// Raw cosine scores in [-1, 1]; the renderer scales to percent.
    pub per_concept_audio: Vec<(String, f64)>,
    pub audio_alignment: f64,
    pub text_alignment: f64,
    /// Present iff exactly two concepts were scored together.
    pub delta_audio: Option<f64>,
    /// Human preference study is not computable here.
    pub preference_ratio: Option<f64>,
    pub config_fingerprint: String,
    pub concept_count: usize,
    pub prompt_count: usize,
    pub clips_per_cell: usize,
    pub total_clips: usize,
}

impl AlignmentReport {
    /// Percent-scale table in a fixed key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "audio_alignment\t{:.2}\ntext_alignment\t{:.2}\n",
            self.audio_alignment * 100.0,
            self.text_alignment * 100.0
        ));
        match self.delta_audio {
            Some(d) => out.push_str(&format!("delta_audio_alignment\t{:.2}\n", d * 100.0)),
            None => out.push_str("delta_audio_alignment\tn/a\n"),
        }
        out.push_str("preference_ratio\tunavailable\n");
        for (name, score) in &self.per_concept_audio {
            out.push_str(&format!("audio_alignment[{name}]\t{:.2}\n", score * 100.0));
        }
        out.push_str(&format!(
            "concepts\t{}\nprompts\t{}\nclips_per_cell\t{}\ntotal_clips\t{}\n",
            self.concept_count, self.prompt_count, self.clips_per_cell, self.total_clips
        ));
        out
    }
}

pub struct EvalSettings {
    pub clips_per_cell: usize,
    pub sampler: SamplerConfig,
    /// Condition generation on the concepts' identifier tokens. Disabled for
    /// pretrained-baseline scoring, where only the prompt conditions.
    pub use_concept_tokens: bool,
}

/// Generate `clips_per_cell` clips per prompt (conditioned jointly on every
/// concept's tokens when enabled), then score audio alignment per concept,
/// text alignment per prompt, and the pairwise discrepancy.
///
/// `concepts` pairs each spec with its scoring reference clips (eval split).
pub fn run_evaluation(
    model: &UNet,
    concepts: &[(&ConceptSpec, &[Tensor])],
    prompts: &[EvalPrompt],
    settings: &EvalSettings,
    schedule: &NoiseSchedule,
    space: &EmbeddingSpace,
    config_fingerprint: &str,
) -> Result<AlignmentReport> {
    if concepts.is_empty() || prompts.is_empty() || settings.clips_per_cell == 0 {
        return Err(Error::Usage("evaluation: empty grid".to_string()));
    }
    let shape = [model.config.latent_len, model.config.latent_channels];
    let specs: Vec<&ConceptSpec> = concepts.iter().map(|(s, _)| *s).collect();

    let mut all_embeddings: Vec<Vec<f64>> = Vec::new();
    let mut text_scores = Vec::with_capacity(prompts.len());
    let mut total_clips = 0usize;
    for prompt in prompts {
        let base = model.text.encode_text(&prompt.text)?;
        let condition = if settings.use_concept_tokens {
            crate::concepts::augment_condition(&model.text, &base, &specs)?
        } else {
            base
        };
        let mut cell_embeddings = Vec::with_capacity(settings.clips_per_cell);
        for k in 0..settings.clips_per_cell {
            let seed = rng::derive_seed(
                settings.sampler.seed,
                "eval-cell",
                (prompt.id as u64) << 32 | k as u64,
            );
            let config = SamplerConfig { seed, ..settings.sampler.clone() };
            let latent = sample(model, Some(&condition.embeddings), &config, schedule, &shape)?;
            cell_embeddings.push(space.audio_embed(&latent)?);
            total_clips += 1;
        }
        let mut mean = centroid(&cell_embeddings)?;
        l2_normalize(&mut mean)?;
        text_scores.push(cosine(&mean, &space.text_embed(prompt)?)?);
        all_embeddings.extend(cell_embeddings);
    }

    let mut per_concept_audio = Vec::with_capacity(concepts.len());
    for (spec, reference) in concepts {
        if reference.is_empty() {
            return Err(Error::Usage(format!(
                "evaluation: concept `{}` has no reference clips",
                spec.name
            )));
        }
        let refs: Vec<Vec<f64>> =
            reference.iter().map(|t| space.audio_embed(t)).collect::<Result<_>>()?;
        per_concept_audio.push((
            spec.name.clone(),
            audio_alignment_scores(&all_embeddings, &refs)?,
        ));
    }

    let audio_alignment =
        per_concept_audio.iter().map(|(_, s)| s).sum::<f64>() / per_concept_audio.len() as f64;
    let text_alignment = text_scores.iter().sum::<f64>() / text_scores.len() as f64;
    let delta_audio = (per_concept_audio.len() == 2)
        .then(|| delta_audio_alignment(&per_concept_audio))
        .transpose()?;

    Ok(AlignmentReport {
        per_concept_audio,
        audio_alignment,
        text_alignment,
        delta_audio,
        preference_ratio: None,
        config_fingerprint: config_fingerprint.to_string(),
        concept_count: concepts.len(),
        prompt_count: prompts.len(),
        clips_per_cell: settings.clips_per_cell,
        total_clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_identities() {
        let a = vec![1.0, 2.0, -3.0];
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let x = vec![1.0, 0.0];
        let y = vec![0.0, 1.0];
        assert_eq!(cosine(&x, &y).unwrap(), 0.0);
        // (1,1)·(1,0) -> 1/sqrt(2)
        let v = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((v - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn cosine_rejects_zero_vector() {
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn cosine_scale_invariant() {
        let a = vec![0.3, -0.2, 0.9];
        let b = vec![-0.1, 0.8, 0.05];
        let scaled: Vec<f64> = a.iter().map(|v| v * 10.0).collect();
        let r1 = cosine(&a, &b).unwrap();
        let r2 = cosine(&scaled, &b).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn delta_symmetric_and_paper_scale() {
        let ab = vec![("a".to_string(), 0.4255), ("b".to_string(), 0.1817)];
        let ba = vec![ab[1].clone(), ab[0].clone()];
        let d1 = delta_audio_alignment(&ab).unwrap();
        let d2 = delta_audio_alignment(&ba).unwrap();
        assert_eq!(d1, d2);
        // percent rendering: 42.55 vs 18.17 -> 24.38
        assert!((d1 * 100.0 - 24.38).abs() < 1e-9);
        let eq = vec![("a".to_string(), 0.5), ("b".to_string(), 0.5)];
        assert_eq!(delta_audio_alignment(&eq).unwrap(), 0.0);
    }

    #[test]
    fn delta_requires_two() {
        let one = vec![("a".to_string(), 0.5)];
        assert!(matches!(delta_audio_alignment(&one), Err(Error::Usage(_))));
    }

    #[test]
    fn full_protocol_arithmetic() {
        assert_eq!(protocol_clip_count(20, 20, 50), 20_000);
        assert_eq!(protocol_clip_count(2, 5, 5), 50);
    }

    #[test]
    fn alignment_scale_and_permutation_invariance() {
        let gen = vec![vec![0.6, 0.8], vec![1.0, 0.0], vec![0.0, 1.0]];
        let refs = vec![vec![0.5, 0.5], vec![0.9, 0.1]];
        let base = audio_alignment_scores(&gen, &refs).unwrap();
        let scaled: Vec<Vec<f64>> = gen.iter().map(|e| e.iter().map(|v| v * 10.0).collect()).collect();
        assert!((audio_alignment_scores(&scaled, &refs).unwrap() - base).abs() < 1e-12);
        let permuted = vec![gen[2].clone(), gen[0].clone(), gen[1].clone()];
        assert!((audio_alignment_scores(&permuted, &refs).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn self_reference_alignment_is_mean_self_to_centroid() {
        let set = vec![vec![1.0, 0.0], vec![0.6, 0.8]];
        let score = audio_alignment_scores(&set, &set).unwrap();
        let center = centroid(&set).unwrap();
        let expected = (cosine(&set[0], &center).unwrap() + cosine(&set[1], &center).unwrap()) / 2.0;
        assert!((score - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_inputs_are_usage_errors() {
        let set = vec![vec![1.0, 0.0]];
        assert!(matches!(
            audio_alignment_scores(&[], &set),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            audio_alignment_scores(&set, &[]),
            Err(Error::Usage(_))
        ));
    }
}
