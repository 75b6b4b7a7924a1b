//! Runs the full staged pipeline and the single-request baseline over a
//! synthetic benchmark with a scripted oracle provider, then compares
//! accuracy and token cost. The oracle answers every prompt correctly, so
//! the pipeline scores 100% while spending more tokens than the baseline —
//! the cost/quality trade the staged design makes.
//!
//! ```text
//! cargo run --example run_pipeline
//! ```

use copkit::cop::{oracle_rules, run_dataset, PipelineConfig, RunMode};
use copkit::forge::{forge_dataset, CorpusIndex, ForgeConfig};
use copkit::gateway::{usage_report, ScriptedProvider};
use copkit::metrics::next_step_matches;
use copkit::synth::{generate, SynthConfig};
use copkit::templates::TemplateSet;

fn main() {
    let synth = generate(&SynthConfig {
        seed: 3,
        procedures_per_domain: 6,
        ..Default::default()
    });
    let corpus = CorpusIndex::build(synth.corpus).expect("valid corpus");
    // Fusion off so the scripted oracle's echoes are exact.
    let config = ForgeConfig {
        fusion_probability: 0.0,
        seed: 3,
        ..Default::default()
    };
    let instances = forge_dataset(&corpus, &synth.image_embeddings, &config)
        .expect("forge")
        .instances;
    println!("benchmark: {} instances", instances.len());

    let provider = ScriptedProvider::new("oracle").with_rules(oracle_rules(&instances));
    let templates = TemplateSet::builtin();

    let mut rows = Vec::new();
    for mode in [
        RunMode::Baseline { cot: true },
        RunMode::Cop(PipelineConfig::default()),
    ] {
        let results =
            run_dataset(&instances, &mode, Some(&provider), None, &templates, 4).expect("run");
        let by_id: std::collections::BTreeMap<&str, &copkit::forge::Instance> =
            instances.iter().map(|i| (i.id.as_str(), i)).collect();
        let correct = results
            .iter()
            .filter(|r| next_step_matches(r, by_id[r.instance_id.as_str()]))
            .count();
        let usage = usage_report(results.iter().map(|r| &r.tokens));
        rows.push((
            mode.label(),
            100.0 * correct as f64 / results.len() as f64,
            usage.per_instance_mean_tokens,
            usage.total_requests,
        ));
    }

    println!("\nmode      accuracy  mean-tokens  requests");
    for (label, accuracy, mean_tokens, requests) in &rows {
        println!("{label:<9} {accuracy:>7.1}%  {mean_tokens:>11.1}  {requests:>8}");
    }
    assert!(
        rows[1].2 > rows[0].2,
        "staged pipeline should cost more tokens than the baseline"
    );
}
