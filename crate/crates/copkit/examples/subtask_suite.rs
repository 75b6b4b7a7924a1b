//! Generates the five diagnostic sub-tasks from a synthetic benchmark, runs
//! a scripted provider over the items (a perfect oracle, then a provider
//! that always answers the last step), and prints both score tables.
//!
//! ```text
//! cargo run --example subtask_suite
//! ```

use copkit::forge::{forge_dataset, CorpusIndex, ForgeConfig};
use copkit::gateway::ScriptedProvider;
use copkit::subtasks::{generate_items, oracle_rules, run_items, score_subtasks, SubTaskKind};
use copkit::synth::{generate, SynthConfig};
use copkit::templates::TemplateSet;

fn main() {
    let synth = generate(&SynthConfig {
        seed: 5,
        procedures_per_domain: 5,
        ..Default::default()
    });
    let corpus = CorpusIndex::build(synth.corpus).expect("valid corpus");
    let config = ForgeConfig {
        fusion_probability: 0.0,
        seed: 5,
        ..Default::default()
    };
    let instances = forge_dataset(&corpus, &synth.image_embeddings, &config)
        .expect("forge")
        .instances;

    let templates = TemplateSet::builtin();
    let (items, warnings) = generate_items(&instances, &SubTaskKind::ALL, 7, &templates);
    println!(
        "generated {} items from {} instances ({} skipped)",
        items.len(),
        instances.len(),
        warnings.len()
    );

    let oracle = ScriptedProvider::new("oracle").with_rules(oracle_rules(&items));
    let responses = run_items(&items, &oracle, 4);
    let texts: Vec<String> = responses.into_iter().map(|r| r.response).collect();
    let table = score_subtasks(&items, &texts).expect("aligned");
    println!("\noracle provider:\n{}", table.to_text());

    // A lazy provider that answers "True" or the final step for everything.
    let lazy = ScriptedProvider::new("lazy").with_default_text("step_3");
    let responses = run_items(&items, &lazy, 4);
    let texts: Vec<String> = responses.into_iter().map(|r| r.response).collect();
    let table = score_subtasks(&items, &texts).expect("aligned");
    println!("always-step_3 provider:\n{}", table.to_text());
}
