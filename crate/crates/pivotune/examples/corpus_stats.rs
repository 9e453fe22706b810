//! Build a small synthetic corpus and inspect its structure: family table,
//! pairwise embedding-centroid similarity, intra-family coherence, and the
//! prompt-suite argmax check that underpins text alignment.
//!
//! Run with: cargo run --release --example corpus_stats

use pivotune::benchdata::{
    build_corpus, generate_concept_clip, prompt_suite, ConceptFamily, CorpusConfig, LatentCodec,
    Split,
};
use pivotune::eval::{centroid, cosine, EmbeddingSpace};
use pivotune::rng;

fn main() -> pivotune::Result<()> {
    let dir = std::env::temp_dir().join("pivotune_corpus_stats");
    let _ = std::fs::remove_dir_all(&dir);
    let config = CorpusConfig {
        seed: 0,
        latent_len: 256,
        latent_channels: 8,
        pretrain_families: 8,
        concept_families: 2,
        clips_per_minute: 6,
        train_minutes: 2,
        eval_minutes: 1,
        // disable the audit so we can look at whatever comes out
        separability_ceiling: 1.1,
        ..CorpusConfig::default()
    };
    let corpus = build_corpus(&config, &dir)?;
    let space = EmbeddingSpace::new(&config);

    println!("== families ==");
    for f in &corpus.families {
        println!(
            "f{:02} {:10} {:?} base_freq={:.3} gate={:?}",
            f.family_id,
            format!("{:?}", f.kind),
            f.attributes.words(),
            f.base_freq,
            f.rhythm_gate.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>(),
        );
    }

    let mut centroids = Vec::new();
    let mut worst_intra = (1.0f64, 0usize);
    println!("\n== intra-family clip-to-centroid cosine ==");
    for f in &corpus.families {
        let latents = corpus.load_latents(f.family_id, Split::Eval)?;
        let embs: Vec<Vec<f64>> = latents
            .iter()
            .map(|l| space.audio_embed(l))
            .collect::<pivotune::Result<_>>()?;
        let c = centroid(&embs)?;
        let mut lo = 1.0f64;
        let mut mean = 0.0;
        for e in &embs {
            let cos = cosine(e, &c)?;
            mean += cos;
            lo = lo.min(cos);
            if cos < worst_intra.0 {
                worst_intra = (cos, f.family_id);
            }
        }
        println!(
            "f{:02} mean {:+.3} min {:+.3}  ({:?} {:?})",
            f.family_id,
            mean / embs.len() as f64,
            lo,
            f.kind,
            f.attributes.words()
        );
        centroids.push(c);
    }

    println!("\n== pairwise centroid cosine ==");
    print!("      ");
    for j in 0..centroids.len() {
        print!(" f{j:02}  ");
    }
    println!();
    let mut worst_pair = (0.0f64, 0, 0);
    for i in 0..centroids.len() {
        print!("f{i:02} ");
        for j in 0..centroids.len() {
            let cos = cosine(&centroids[i], &centroids[j])?;
            print!("{cos:+.2} ");
            if i < j && cos > worst_pair.0 {
                worst_pair = (cos, i, j);
            }
        }
        println!();
    }
    println!(
        "\nworst intra-family cosine: {:.3} (family {})",
        worst_intra.0, worst_intra.1
    );
    println!(
        "worst inter-family cosine: {:.3} (families {} and {})",
        worst_pair.0, worst_pair.1, worst_pair.2
    );

    println!("\n== prompt argmax check ==");
    let prompts = prompt_suite();
    let prompt_embs: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| space.text_embed(p))
        .collect::<pivotune::Result<_>>()?;
    let codec = LatentCodec::new(config.latent_channels, config.seed);
    let mut confusions = 0;
    for (i, p) in prompts.iter().enumerate() {
        let prototype = ConceptFamily::prototype(p.attributes, p.kind);
        let mut embs = Vec::new();
        for k in 0..8 {
            let wave = generate_concept_clip(
                &prototype,
                rng::derive_seed(99, "argmax-example", (i * 100 + k) as u64),
                config.samples_per_clip(),
            );
            embs.push(space.audio_embed(&codec.encode(&wave)?)?);
        }
        let mut mean = centroid(&embs)?;
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        mean.iter_mut().for_each(|v| *v /= norm);
        let scores: Vec<f64> = prompt_embs
            .iter()
            .map(|e| cosine(&mean, e))
            .collect::<pivotune::Result<_>>()?;
        let best = scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        if best != i {
            confusions += 1;
            println!(
                "  prompt {i:2} `{}` -> best {} `{}` ({:.3} vs {:.3})",
                p.text, best, prompts[best].text, scores[i], scores[best]
            );
        }
    }
    println!("confusions: {confusions}/20");
    Ok(())
}
