//! Hard-negative mining: for one query image, compare top-k (visually
//! proximate) against random distractor procedures from the same domain,
//! and show the cosine scores that make the top-k picks "hard".
//!
//! ```text
//! cargo run --example negative_mining
//! ```

use copkit::embed::cosine_similarity;
use copkit::forge::{mine_negatives, CorpusIndex, ForgeConfig, NegativeStrategy};
use copkit::model::VisualState;
use copkit::synth::{generate, SynthConfig};

fn main() {
    let synth = generate(&SynthConfig {
        seed: 13,
        domains: vec!["cars".into()],
        procedures_per_domain: 30,
        ..Default::default()
    });
    let store = synth.image_embeddings;
    let corpus = CorpusIndex::build(synth.corpus).expect("valid corpus");

    let positive = corpus.procedures().next().unwrap().clone();
    let query_image = positive.steps[0].image_refs[0].clone();
    let visual = VisualState {
        image_id: query_image.clone(),
        source_procedure: positive.id.clone(),
        after_step: 1,
    };
    println!("query image {query_image} from procedure {}", positive.id);

    for strategy in [NegativeStrategy::Topk, NegativeStrategy::Random] {
        let config = ForgeConfig {
            negative_strategy: strategy,
            num_candidates: 4,
            seed: 13,
            ..Default::default()
        };
        let negatives = mine_negatives(&visual, &store, &corpus, &config).expect("pool");
        println!("\n{strategy:?} distractors:");
        let query_vec = store.get(&query_image).unwrap();
        for id in &negatives {
            // Best image cosine within the mined procedure, for context.
            let best = corpus
                .get(id)
                .unwrap()
                .steps
                .iter()
                .flat_map(|s| &s.image_refs)
                .filter_map(|img| store.get(img))
                .map(|v| cosine_similarity(query_vec, v).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            println!("  {id}  (best image cosine {best:.3})");
        }
    }
}
