//! Replaces pipeline phases with pure embedding retrieval: P1 swaps the
//! candidate-selection request for a max-over-max cosine match, P3 swaps
//! current-step identification for an image/step-text match, and Full runs
//! the whole pipeline with zero provider requests.
//!
//! The store is rigged so the gold current step's text embedding duplicates
//! the image embedding — Full mode then reads the next step straight off the
//! matched manual.
//!
//! ```text
//! cargo run --example retrieval_variants
//! ```

use copkit::cop::{clip_variant, oracle_rules, text_embedding_key, ClipMode, PipelineConfig};
use copkit::embed::{EmbeddingStore, EmbeddingVector};
use copkit::forge::{forge_dataset, CorpusIndex, ForgeConfig};
use copkit::gateway::ScriptedProvider;
use copkit::metrics::next_step_matches;
use copkit::synth::{generate, SynthConfig};
use copkit::templates::TemplateSet;
use copkit::util::stable_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let synth = generate(&SynthConfig {
        seed: 21,
        procedures_per_domain: 5,
        ..Default::default()
    });
    let corpus = CorpusIndex::build(synth.corpus).expect("valid corpus");
    let config = ForgeConfig {
        fusion_probability: 0.0,
        seed: 21,
        ..Default::default()
    };
    let instances = forge_dataset(&corpus, &synth.image_embeddings, &config)
        .expect("forge")
        .instances;

    // Rigged store: every candidate step text gets a random unit vector,
    // then each instance's gold current step is overwritten with its image
    // vector (cosine 1.0 dominance).
    let dim = 12;
    let mut store = EmbeddingStore::new();
    for instance in &instances {
        for candidate in &instance.candidates {
            for step in &candidate.steps {
                let key = text_embedding_key(&step.text);
                if !store.contains(&key) {
                    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(99, &["step", &key]));
                    let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    store.insert(EmbeddingVector::new(key, v)).unwrap();
                }
            }
        }
    }
    for instance in &instances {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(99, &["img", &instance.image]));
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        store
            .insert(EmbeddingVector::new(instance.image.clone(), v.clone()))
            .unwrap();
        let gold_current = &instance.positive().steps[instance.after_step as usize - 1];
        store
            .upsert(EmbeddingVector::new(
                text_embedding_key(&gold_current.text),
                v,
            ))
            .unwrap();
    }

    let provider = ScriptedProvider::new("oracle").with_rules(oracle_rules(&instances));
    let pipeline = PipelineConfig::default();
    let templates = TemplateSet::builtin();

    println!("variant    accuracy  provider-requests");
    for mode in [ClipMode::P1, ClipMode::P3, ClipMode::Full] {
        let mut correct = 0;
        let mut requests = 0u64;
        for instance in &instances {
            let result = clip_variant(
                instance,
                mode,
                &store,
                Some(&provider),
                &pipeline,
                &templates,
            );
            requests += result.tokens.requests();
            if next_step_matches(&result, instance) {
                correct += 1;
            }
        }
        println!(
            "{:<10} {:>7.1}%  {requests:>17}",
            mode.label(),
            100.0 * correct as f64 / instances.len() as f64
        );
    }
}
