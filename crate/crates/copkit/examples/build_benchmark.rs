//! Builds a benchmark from scratch, entirely in process: synthesize a
//! corpus with pseudo-embeddings, forge evaluation instances (step fusion +
//! hard-negative mining), split with an out-of-distribution domain held out,
//! and print the statistics table plus train/test semantic overlap.
//!
//! ```text
//! cargo run --example build_benchmark
//! ```

use copkit::forge::{
    corpus_stats, forge_dataset, semantic_overlap, split_dataset, CorpusIndex, ForgeConfig,
    SplitSpec,
};
use copkit::synth::{generate, SynthConfig};

fn main() {
    let synth = generate(&SynthConfig {
        seed: 11,
        procedures_per_domain: 8,
        ..Default::default()
    });
    println!(
        "synthesized {} procedures / {} images",
        synth.ledger.procedures, synth.ledger.images
    );

    let corpus = CorpusIndex::build(synth.corpus).expect("valid corpus");
    let config = ForgeConfig {
        fusion_probability: 0.5,
        seed: 11,
        ood_domains: ["work".to_string()].into(),
        ..Default::default()
    };
    let output = forge_dataset(&corpus, &synth.image_embeddings, &config).expect("forge");
    println!(
        "forged {} instances ({} skipped)",
        output.instances.len(),
        output.skipped.len()
    );

    let spec = SplitSpec {
        ood_domains: config.ood_domains.clone(),
        train_ratio: 0.5,
    };
    let split = split_dataset(&output.instances, &spec, config.seed);
    for warning in &split.warnings {
        println!("note: {warning}");
    }

    let stats = corpus_stats(&[("train", &split.train), ("test", &split.test)]);
    println!("\n{}", stats.to_text());

    let overlap = semantic_overlap(&split.train, &split.test, &synth.text_embeddings)
        .expect("text embeddings cover all procedures");
    println!(
        "train/test semantic overlap: median max-cosine {:.3} over {} test items",
        overlap.median_cosine, overlap.pairs
    );

    // A peek at one instance.
    let sample = &output.instances[0];
    println!(
        "\nsample instance {}: image {}, {} candidates, positive #{}, gold next step: {:?}",
        sample.id,
        sample.image,
        sample.candidates.len(),
        sample.label + 1,
        sample.gold_next_step
    );
}
