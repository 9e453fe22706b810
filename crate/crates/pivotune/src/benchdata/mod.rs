//! Deterministic synthetic benchmark: procedural "instrument" and "genre"
//! concept families, templated captions, a fixed prompt suite, and the
//! corpus builder with train/eval splits.
//!
//! Families are separable by construction: each gets a distinct attribute
//! combination plus a seeded signature (harmonic jitter, register detune,
//! scale choice), and the corpus build audits pairwise embedding-centroid
//! similarity before writing anything is considered done.

pub mod codec;

pub use codec::{load_waveform, save_waveform, LatentCodec};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tensor;
use crate::checkpoint::{load_tensor_file, save_tensor_file};
use crate::error::{Error, Result};
use crate::rng;

/// Words every caption and prompt is built from. The model's vocabulary
/// manifest is exactly this list.
pub const VOCAB_WORDS: [&str; 11] = [
    "bright",
    "mellow",
    "plucked",
    "sustained",
    "high",
    "low",
    "fast",
    "slow",
    "tones",
    "rhythm",
    "music",
];

/// Caption used for concept reference clips during fine-tuning, where the
/// concept identifier supplies the description.
pub const GENERIC_CAPTION: &str = "music";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Brightness {
    Mellow,
    Bright,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Articulation {
    Plucked,
    Sustained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Register {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TempoClass {
    Slow,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeSet {
    pub brightness: Brightness,
    pub articulation: Articulation,
    pub register: Register,
    pub tempo: TempoClass,
}

impl AttributeSet {
    /// Decode one of the 16 attribute combinations.
    pub fn from_index(i: usize) -> Self {
        AttributeSet {
            brightness: if i & 1 == 0 { Brightness::Mellow } else { Brightness::Bright },
            articulation: if i & 2 == 0 {
                Articulation::Plucked
            } else {
                Articulation::Sustained
            },
            register: if i & 4 == 0 { Register::Low } else { Register::High },
            tempo: if i & 8 == 0 { TempoClass::Slow } else { TempoClass::Fast },
        }
    }

    pub fn words(&self) -> [&'static str; 4] {
        [
            match self.brightness {
                Brightness::Mellow => "mellow",
                Brightness::Bright => "bright",
            },
            match self.articulation {
                Articulation::Plucked => "plucked",
                Articulation::Sustained => "sustained",
            },
            match self.register {
                Register::Low => "low",
                Register::High => "high",
            },
            match self.tempo {
                TempoClass::Slow => "slow",
                TempoClass::Fast => "fast",
            },
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Instrument,
    Genre,
}

impl FamilyKind {
    pub fn word(&self) -> &'static str {
        match self {
            FamilyKind::Instrument => "tones",
            FamilyKind::Genre => "rhythm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvShape {
    /// Fast attack, exponential decay.
    Pluck,
    /// Trapezoid with 10% ramps.
    Arch,
    /// Constant 1; degenerate shape for tests.
    Flat,
}

/// One procedural concept: a harmonic amplitude profile (instrument timbre)
/// or a rhythm-gated texture (genre), plus melodic parameters.
#[derive(Debug, Clone)]
pub struct ConceptFamily {
    pub family_id: usize,
    pub kind: FamilyKind,
    pub attributes: AttributeSet,
    /// Relative amplitude of harmonics 1..=H.
    pub harmonics: Vec<f64>,
    /// Frequency multipliers the melody draws notes from.
    pub note_ratios: Vec<f64>,
    /// Fundamental, in cycles per sample.
    pub base_freq: f64,
    pub env: EnvShape,
    /// Nominal note duration in samples.
    pub note_len: usize,
    /// Per-beat gain pattern; `[1.0]` means ungated.
    pub rhythm_gate: Vec<f64>,
    pub beat_len: usize,
    /// Sinusoid-cluster texture (genres): fixed frequencies and amplitude.
    pub noise_freqs: Vec<f64>,
    pub noise_amp: f64,
    /// Absolute per-note frequency wobble (cycles/sample).
    pub intonation_jitter: f64,
    pub seed: u64,
}

const SCALES: [&[f64]; 3] = [
    // equal-tempered degree sets; irrational ratios keep different notes'
    // harmonics from colliding coherently
    &[1.0, 1.122462, 1.259921, 1.498307],
    &[1.0, 1.189207, 1.33484, 1.781797],
    &[1.0, 1.189207, 1.414214, 1.681793],
];

fn rolloff(b: Brightness) -> f64 {
    match b {
        Brightness::Mellow => 2.0,
        Brightness::Bright => 0.25,
    }
}

fn register_freq(r: Register) -> f64 {
    match r {
        Register::Low => 0.05,
        Register::High => 0.085,
    }
}

fn tempo_note_len(t: TempoClass) -> usize {
    match t {
        TempoClass::Slow => 64,
        TempoClass::Fast => 20,
    }
}

fn tempo_beat_len(t: TempoClass) -> usize {
    match t {
        TempoClass::Slow => 32,
        TempoClass::Fast => 12,
    }
}

impl ConceptFamily {
    /// Seeded family with its own signature on top of the attribute
    /// prototypes.
    pub fn derive(family_id: usize, kind: FamilyKind, attributes: AttributeSet, corpus_seed: u64) -> Self {
        let seed = rng::derive_seed(corpus_seed, "family", family_id as u64);
        let mut r = rng::stream(seed, "family-params", 0);
        let detune_semitones: f64 = r.gen_range(-1.5..1.5);
        let base_freq = register_freq(attributes.register) * (2f64).powf(detune_semitones / 12.0);
        let ro = rolloff(attributes.brightness);
        let mut harmonics: Vec<f64> = (1..=5)
            .map(|h| (h as f64).powf(-ro) * r.gen_range(-0.5..0.5f64).exp())
            .collect();
        let peak = harmonics.iter().cloned().fold(0.0, f64::max);
        for a in harmonics.iter_mut() {
            *a /= peak;
        }
        let note_ratios = SCALES[r.gen_range(0..SCALES.len())].to_vec();
        let (rhythm_gate, beat_len, noise_freqs, noise_amp) = match kind {
            FamilyKind::Instrument => (vec![1.0], 1, Vec::new(), 0.0),
            FamilyKind::Genre => {
                let gate = vec![
                    1.0,
                    r.gen_range(0.05..0.3),
                    r.gen_range(0.5..0.9),
                    r.gen_range(0.05..0.3),
                ];
                let center: f64 = r.gen_range(0.016..0.038);
                let spread: f64 = r.gen_range(0.12..0.2);
                let freqs = (0..6)
                    .map(|j| center * (1.0 + spread * (j as f64 - 2.5)))
                    .collect();
                (gate, tempo_beat_len(attributes.tempo), freqs, 0.8)
            }
        };
        ConceptFamily {
            family_id,
            kind,
            attributes,
            harmonics,
            note_ratios,
            base_freq,
            env: match attributes.articulation {
                Articulation::Plucked => EnvShape::Pluck,
                Articulation::Sustained => EnvShape::Arch,
            },
            note_len: tempo_note_len(attributes.tempo),
            rhythm_gate,
            beat_len,
            noise_freqs,
            noise_amp,
            intonation_jitter: 0.006,
            seed,
        }
    }

    /// Jitter-free class prototype used for canonical prompt rendering.
    pub fn prototype(attributes: AttributeSet, kind: FamilyKind) -> Self {
        let ro = rolloff(attributes.brightness);
        let mut harmonics: Vec<f64> = (1..=5).map(|h| (h as f64).powf(-ro)).collect();
        let peak = harmonics.iter().cloned().fold(0.0, f64::max);
        for a in harmonics.iter_mut() {
            *a /= peak;
        }
        let (rhythm_gate, beat_len, noise_freqs, noise_amp) = match kind {
            FamilyKind::Instrument => (vec![1.0], 1, Vec::new(), 0.0),
            FamilyKind::Genre => {
                let center = match attributes.register {
                    Register::Low => 0.02,
                    Register::High => 0.03,
                };
                let freqs = (0..6).map(|j| center * (1.0 + 0.16 * (j as f64 - 2.5))).collect();
                (
                    vec![1.0, 0.15, 0.7, 0.15],
                    tempo_beat_len(attributes.tempo),
                    freqs,
                    0.8,
                )
            }
        };
        ConceptFamily {
            family_id: usize::MAX,
            kind,
            attributes,
            harmonics,
            note_ratios: SCALES[0].to_vec(),
            base_freq: register_freq(attributes.register),
            env: match attributes.articulation {
                Articulation::Plucked => EnvShape::Pluck,
                Articulation::Sustained => EnvShape::Arch,
            },
            note_len: tempo_note_len(attributes.tempo),
            rhythm_gate,
            beat_len,
            noise_freqs,
            noise_amp,
            intonation_jitter: 0.006,
            seed: 0,
        }
    }

    pub fn caption(&self) -> String {
        let w = self.attributes.words();
        format!("{} {} {} {} {}", w[0], w[1], w[2], w[3], self.kind.word())
    }
}

fn envelope(shape: EnvShape, progress: f64) -> f64 {
    match shape {
        EnvShape::Pluck => {
            let attack = 0.04;
            if progress < attack {
                progress / attack
            } else {
                (-3.5 * (progress - attack)).exp()
            }
        }
        EnvShape::Arch => {
            let ramp = 0.1;
            if progress < ramp {
                progress / ramp
            } else if progress > 1.0 - ramp {
                (1.0 - progress) / ramp
            } else {
                1.0
            }
        }
        EnvShape::Flat => 1.0,
    }
}

/// Deterministic signal: a seeded melody over the family's note set, shaped
/// by its timbre profile, rhythm gate, and texture layer. Peak-normalized
/// into [-1, 1].
pub fn generate_concept_clip(family: &ConceptFamily, variation_seed: u64, frames: usize) -> Vec<f64> {
    assert!(frames > 0, "generate_concept_clip: frames must be positive");
    let mut r = rng::stream(family.seed, "clip", variation_seed);
    let tau = std::f64::consts::TAU;
    // oscillator phases belong to the family, not the clip: cross-note
    // interference then repeats identically clip to clip and reads as
    // signature rather than noise
    let mut phase_rng = rng::stream(family.seed, "family-phases", 0);
    let phases: Vec<f64> =
        (0..family.harmonics.len()).map(|_| phase_rng.gen_range(0.0..tau)).collect();
    let noise_phases: Vec<f64> =
        (0..family.noise_freqs.len()).map(|_| phase_rng.gen_range(0.0..tau)).collect();

    // melody: (start, duration, ratio); notes cycle through the scale in
    // shuffled bags so every degree carries near-equal weight in any clip,
    // keeping the long-run spectrum a stable family signature
    let mut notes = Vec::new();
    let mut t = 0usize;
    let mut bag: Vec<f64> = Vec::new();
    let beat_locked = family.rhythm_gate.len() > 1;
    let mut occurrences: std::collections::HashMap<u64, u64> = std::collections::HashMap::new();
    // stop before a degenerate tail note; the final note overruns instead
    while t + family.note_len / 3 < frames {
        if bag.is_empty() {
            bag = family.note_ratios.clone();
            bag.shuffle(&mut r);
        }
        let dur = if beat_locked { 2 * family.beat_len } else { family.note_len };
        let ratio = bag.pop().expect("bag refilled");
        // deterministic detune ladder: repeats of a degree sit a resolvable
        // bin apart so they add by power, not by phase; the pattern cycles
        // to keep intonation bounded on long clips
        const LADDER: [f64; 8] = [0.0, 1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0];
        let occ = occurrences.entry(ratio.to_bits()).or_insert(0);
        let detune = family.intonation_jitter * LADDER[(*occ % 8) as usize];
        *occ += 1;
        let end = if t + dur + family.note_len / 3 >= frames { frames } else { t + dur };
        notes.push((t, end - t, ratio, detune));
        t = end;
    }

    let mut wave = vec![0.0; frames];
    let vibrato_rate = match family.attributes.tempo {
        TempoClass::Slow => 0.014,
        TempoClass::Fast => 0.028,
    };
    const VIBRATO_DEPTH: f64 = 0.35;
    const CLICK: [f64; 3] = [0.5, -0.4, 0.2];
    for &(start, dur, ratio, detune) in &notes {
        let f = family.base_freq * ratio + detune;
        for n in start..start + dur {
            let progress = (n - start) as f64 / dur as f64;
            let env = envelope(family.env, progress);
            // sustained notes carry vibrato, which spreads each harmonic
            // into sidebands the embedder can see
            let wobble = if family.env == EnvShape::Arch {
                VIBRATO_DEPTH * (tau * vibrato_rate * n as f64).sin()
            } else {
                0.0
            };
            let mut s = 0.0;
            for (h, (&amp, &phase)) in family.harmonics.iter().zip(&phases).enumerate() {
                // global-time phase, so equal-pitch notes join seamlessly
                s += amp * (tau * f * (h + 1) as f64 * n as f64 + phase + wobble).sin();
            }
            wave[n] += env * s;
        }
        // plucked notes open with a short broadband click
        if family.env == EnvShape::Pluck {
            for (i, c) in CLICK.iter().enumerate() {
                if start + i < frames {
                    wave[start + i] += c * 0.5;
                }
            }
        }
    }
    // rhythm gate and texture layer
    for (n, w) in wave.iter_mut().enumerate() {
        let gate = family.rhythm_gate[(n / family.beat_len.max(1)) % family.rhythm_gate.len()];
        *w *= gate;
        if !family.noise_freqs.is_empty() {
            let mut s = 0.0;
            for (&f, &p) in family.noise_freqs.iter().zip(&noise_phases) {
                s += (tau * f * n as f64 + p).sin();
            }
            *w += gate * family.noise_amp * s / family.noise_freqs.len() as f64;
        }
    }
    let peak = wave.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if peak > 0.0 {
        let scale = 0.8 / peak;
        for w in wave.iter_mut() {
            *w *= scale;
        }
    }
    wave
}

// ---- prompt suite ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct EvalPrompt {
    pub id: usize,
    pub text: String,
    pub attributes: AttributeSet,
    pub kind: FamilyKind,
}

/// The fixed 20-prompt evaluation suite: all 16 attribute combinations with
/// alternating kind words, plus four "music" variants.
pub fn prompt_suite() -> Vec<EvalPrompt> {
    let mut prompts = Vec::with_capacity(20);
    for i in 0..16 {
        let attributes = AttributeSet::from_index(i);
        let kind = if i % 2 == 0 { FamilyKind::Instrument } else { FamilyKind::Genre };
        let w = attributes.words();
        prompts.push(EvalPrompt {
            id: i,
            text: format!("{} {} {} {} {}", w[0], w[1], w[2], w[3], kind.word()),
            attributes,
            kind,
        });
    }
    // four "music" variants with the kind flipped relative to the first 16,
    // so every prompt has a distinct (attributes, kind) ground truth
    for (slot, combo) in [0usize, 3, 5, 6].into_iter().enumerate() {
        let attributes = AttributeSet::from_index(combo);
        let kind = if combo % 2 == 0 { FamilyKind::Genre } else { FamilyKind::Instrument };
        let w = attributes.words();
        prompts.push(EvalPrompt {
            id: 16 + slot,
            text: format!("{} {} {} {} music", w[0], w[1], w[2], w[3]),
            attributes,
            kind,
        });
    }
    prompts
}

// ---- corpus ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Eval => write!(f, "eval"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub clip_id: String,
    pub family_id: usize,
    pub split: Split,
    /// Latent rows (waveform samples = duration_frames * channels).
    pub duration_frames: usize,
    pub caption: String,
    pub wav_path: String,
    pub latent_path: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub latent_len: usize,
    pub latent_channels: usize,
    pub pretrain_families: usize,
    pub concept_families: usize,
    /// The paper-analog frame budget: one "minute" is this many clips.
    pub clips_per_minute: usize,
    pub train_minutes: usize,
    pub eval_minutes: usize,
    /// Pairwise centroid cosine must stay below this at build time.
    pub separability_ceiling: f64,
    /// Audio embedding dimensionality.
    pub embed_dim: usize,
    /// Spectral bands per channel in the audio embedder.
    pub embed_bands: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 0,
            latent_len: 256,
            latent_channels: 8,
            pretrain_families: 8,
            concept_families: 2,
            clips_per_minute: 30,
            train_minutes: 2,
            eval_minutes: 1,
            separability_ceiling: 0.9,
            embed_dim: 32,
            embed_bands: 32,
        }
    }
}

impl CorpusConfig {
    pub fn total_families(&self) -> usize {
        self.pretrain_families + self.concept_families
    }

    pub fn samples_per_clip(&self) -> usize {
        self.latent_len * self.latent_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_families() > 16 {
            return Err(Error::Config(format!(
                "corpus: {} families exceed the 16 distinct attribute combinations; \
                 pretrain and held-out families would overlap",
                self.total_families()
            )));
        }
        if self.pretrain_families == 0 || self.concept_families == 0 {
            return Err(Error::Config("corpus: need pretrain and concept families".to_string()));
        }
        if self.clips_per_minute == 0 || self.train_minutes == 0 || self.eval_minutes == 0 {
            return Err(Error::Config("corpus: zero frame budget".to_string()));
        }
        Ok(())
    }
}

pub struct Corpus {
    pub root: PathBuf,
    pub config: CorpusConfig,
    pub families: Vec<ConceptFamily>,
    pub clips: Vec<ClipRecord>,
    pub prompts: Vec<EvalPrompt>,
}

/// Assign attribute combinations and kinds to family ids. Held-out concept
/// families are the trailing `concept_families` entries, so they never share
/// a combination with a pretraining family.
pub fn derive_families(config: &CorpusConfig) -> Result<Vec<ConceptFamily>> {
    config.validate()?;
    let mut combo_order: Vec<usize> = (0..16).collect();
    let mut r = rng::stream(config.seed, "family-combos", 0);
    combo_order.shuffle(&mut r);
    Ok((0..config.total_families())
        .map(|i| {
            let kind = if i % 2 == 0 { FamilyKind::Instrument } else { FamilyKind::Genre };
            ConceptFamily::derive(i, kind, AttributeSet::from_index(combo_order[i]), config.seed)
        })
        .collect())
}

impl Corpus {
    pub fn pretrain_family_ids(&self) -> Vec<usize> {
        (0..self.config.pretrain_families).collect()
    }

    pub fn concept_family_ids(&self) -> Vec<usize> {
        (self.config.pretrain_families..self.config.total_families()).collect()
    }

    pub fn family(&self, family_id: usize) -> Result<&ConceptFamily> {
        self.families
            .get(family_id)
            .ok_or_else(|| Error::Data(format!("unknown family {family_id}")))
    }

    pub fn clips_of(&self, family_id: usize, split: Split) -> Vec<&ClipRecord> {
        self.clips
            .iter()
            .filter(|c| c.family_id == family_id && c.split == split)
            .collect()
    }

    pub fn load_latent(&self, clip: &ClipRecord) -> Result<Tensor> {
        load_tensor_file(&self.root.join(&clip.latent_path))
    }

    pub fn load_latents(&self, family_id: usize, split: Split) -> Result<Vec<Tensor>> {
        self.clips_of(family_id, split)
            .iter()
            .map(|c| self.load_latent(c))
            .collect()
    }

    pub fn codec(&self) -> LatentCodec {
        LatentCodec::new(self.config.latent_channels, self.config.seed)
    }
}

/// Generate every clip, write waveforms/latents/manifests under `root`, and
/// audit family separability in embedding space.
pub fn build_corpus(config: &CorpusConfig, root: &Path) -> Result<Corpus> {
    config.validate()?;
    let families = derive_families(config)?;
    let codec = LatentCodec::new(config.latent_channels, config.seed);
    fs::create_dir_all(root.join("wav"))?;
    fs::create_dir_all(root.join("lat"))?;

    let samples = config.samples_per_clip();
    let mut clips = Vec::new();
    for family in &families {
        let budgets = [
            (Split::Train, config.train_minutes * config.clips_per_minute),
            (Split::Eval, config.eval_minutes * config.clips_per_minute),
        ];
        for (split, count) in budgets {
            for idx in 0..count {
                let variation = match split {
                    Split::Train => idx as u64,
                    Split::Eval => 1_000_000 + idx as u64,
                };
                let wave = generate_concept_clip(family, variation, samples);
                let latent = codec.encode(&wave)?;
                let clip_id = format!("f{:02}_{}{:03}", family.family_id, split, idx);
                let wav_path = format!("wav/{clip_id}.pwf");
                let latent_path = format!("lat/{clip_id}.lat");
                save_waveform(&root.join(&wav_path), &wave)?;
                save_tensor_file(&root.join(&latent_path), &clip_id, &latent)?;
                clips.push(ClipRecord {
                    clip_id,
                    family_id: family.family_id,
                    split,
                    duration_frames: config.latent_len,
                    caption: family.caption(),
                    wav_path,
                    latent_path,
                });
            }
        }
    }

    let prompts = prompt_suite();
    let corpus = Corpus {
        root: root.to_path_buf(),
        config: config.clone(),
        families,
        clips,
        prompts,
    };
    audit_separability(&corpus)?;
    write_manifests(&corpus)?;
    Ok(corpus)
}

/// Pairwise family-centroid cosine must stay below the configured ceiling.
fn audit_separability(corpus: &Corpus) -> Result<()> {
    let space = crate::eval::EmbeddingSpace::new(&corpus.config);
    let mut centroids = Vec::new();
    for family in &corpus.families {
        let latents = corpus.load_latents(family.family_id, Split::Eval)?;
        let embeddings: Vec<Vec<f64>> = latents
            .iter()
            .map(|l| space.audio_embed(l))
            .collect::<Result<_>>()?;
        centroids.push(crate::eval::centroid(&embeddings)?);
    }
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            let cos = crate::eval::cosine(&centroids[i], &centroids[j])?;
            if cos >= corpus.config.separability_ceiling {
                return Err(Error::Data(format!(
                    "corpus separability audit failed: families {i} and {j} \
                     have centroid cosine {cos:.4} >= {}",
                    corpus.config.separability_ceiling
                )));
            }
        }
    }
    Ok(())
}

fn write_manifests(corpus: &Corpus) -> Result<()> {
    // families.tsv: family_id, kind, attribute words, seed
    let mut fam = String::new();
    for f in &corpus.families {
        let w = f.attributes.words();
        fam.push_str(&format!(
            "{}\t{:?}\t{} {} {} {}\t{}\n",
            f.family_id,
            f.kind,
            w[0],
            w[1],
            w[2],
            w[3],
            f.seed
        ));
    }
    crate::checkpoint::atomic_write(&corpus.root.join("families.tsv"), fam.as_bytes())?;

    // manifest.tsv: clip_id, family_id, split, duration_frames, caption, wav, latent
    let mut man = String::new();
    for c in &corpus.clips {
        man.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            c.clip_id, c.family_id, c.split, c.duration_frames, c.caption, c.wav_path, c.latent_path
        ));
    }
    crate::checkpoint::atomic_write(&corpus.root.join("manifest.tsv"), man.as_bytes())?;

    // prompts.tsv: id, text
    let mut pr = String::new();
    for p in &corpus.prompts {
        pr.push_str(&format!("{}\t{}\n", p.id, p.text));
    }
    crate::checkpoint::atomic_write(&corpus.root.join("prompts.tsv"), pr.as_bytes())?;

    let config_json =
        serde_json::to_string_pretty(&corpus.config).expect("corpus config serializes");
    crate::checkpoint::atomic_write(&corpus.root.join("corpus.json"), config_json.as_bytes())?;
    Ok(())
}

/// Reload a corpus previously written by [`build_corpus`].
pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let config_json = fs::read_to_string(root.join("corpus.json"))
        .map_err(|e| Error::Data(format!("corpus {}: {e}", root.display())))?;
    let config: CorpusConfig = serde_json::from_str(&config_json)
        .map_err(|e| Error::Data(format!("corpus config: {e}")))?;
    let families = derive_families(&config)?;

    let manifest = fs::read_to_string(root.join("manifest.tsv"))?;
    let mut clips = Vec::new();
    for (line_no, line) in manifest.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(Error::Data(format!(
                "manifest line {}: expected 7 fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let split = match fields[2] {
            "train" => Split::Train,
            "eval" => Split::Eval,
            other => return Err(Error::Data(format!("manifest line {}: bad split `{other}`", line_no + 1))),
        };
        clips.push(ClipRecord {
            clip_id: fields[0].to_string(),
            family_id: fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("manifest line {}: bad family id", line_no + 1)))?,
            split,
            duration_frames: fields[3]
                .parse()
                .map_err(|_| Error::Data(format!("manifest line {}: bad frame count", line_no + 1)))?,
            caption: fields[4].to_string(),
            wav_path: fields[5].to_string(),
            latent_path: fields[6].to_string(),
        });
    }
    Ok(Corpus {
        root: root.to_path_buf(),
        config,
        families,
        clips,
        prompts: prompt_suite(),
    })
}
