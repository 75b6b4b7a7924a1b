//! Deterministic synthetic corpus generator: procedures with parameterized
//! lengths and domains, one visual state per step, and pseudo-embeddings
//! (unit vectors with domain/procedure structure) for images, procedure
//! texts, and step texts. A ledger records the counts the generator
//! produced so statistics can be checked against an independent source.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cop::text_embedding_key;
use crate::embed::{EmbeddingStore, EmbeddingVector};
use crate::model::{Procedure, Step, CANONICAL_DOMAINS};
use crate::util::stable_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub domains: Vec<String>,
    pub procedures_per_domain: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    pub images_per_step: usize,
    pub embedding_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            domains: CANONICAL_DOMAINS.iter().map(|d| d.to_string()).collect(),
            procedures_per_domain: 12,
            min_steps: 3,
            max_steps: 12,
            images_per_step: 1,
            embedding_dim: 16,
        }
    }
}

/// Counts recorded while generating, used as an independent statistics
/// oracle downstream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthLedger {
    pub procedures: usize,
    pub images: usize,
    pub per_domain_procedures: BTreeMap<String, usize>,
    /// Images attached to non-final steps, i.e. the number of instances a
    /// forge pass over this corpus can produce per domain.
    pub per_domain_expected_instances: BTreeMap<String, usize>,
    pub length_histogram: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub corpus: Vec<Procedure>,
    pub image_embeddings: EmbeddingStore,
    pub text_embeddings: EmbeddingStore,
    pub ledger: SynthLedger,
}

const VERBS: [&str; 12] = [
    "Align",
    "Attach",
    "Calibrate",
    "Clean",
    "Inspect",
    "Measure",
    "Mount",
    "Remove",
    "Rotate",
    "Secure",
    "Test",
    "Tighten",
];
const OBJECTS: [&str; 12] = [
    "bracket", "cable", "filter", "gauge", "housing", "lever", "panel", "rail", "seal", "sensor",
    "valve", "wheel",
];
const TASKS: [&str; 10] = [
    "assembly",
    "calibration",
    "cleanup",
    "inspection",
    "installation",
    "maintenance",
    "repair",
    "setup",
    "tuning",
    "upgrade",
];

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-3 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn blend(base: &[f32], noise: &[f32], noise_weight: f32) -> Vec<f32> {
    let mixed: Vec<f32> = base
        .iter()
        .zip(noise)
        .map(|(b, n)| b * (1.0 - noise_weight) + n * noise_weight)
        .collect();
    let norm: f32 = mixed.iter().map(|x| x * x).sum::<f32>().sqrt();
    mixed.iter().map(|x| x / norm.max(1e-6)).collect()
}

/// Generates the corpus, both embedding stores, and the ledger. Pure in the
/// config: identical configs produce identical output.
pub fn generate(config: &SynthConfig) -> SynthOutput {
    assert!(config.min_steps >= 1 && config.max_steps >= config.min_steps);
    let dim = config.embedding_dim.max(2);
    let mut corpus = Vec::new();
    let mut image_embeddings = EmbeddingStore::new();
    let mut text_embeddings = EmbeddingStore::new();
    let mut ledger = SynthLedger::default();

    for domain in &config.domains {
        let mut domain_rng =
            ChaCha8Rng::seed_from_u64(stable_seed(config.seed, &["domain", domain]));
        let domain_center = unit_vector(&mut domain_rng, dim);
        for k in 0..config.procedures_per_domain {
            let proc_id = format!("{domain}-{k:03}");
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(config.seed, &["proc", &proc_id]));
            let proc_center = blend(&domain_center, &unit_vector(&mut rng, dim), 0.5);
            let length = rng.gen_range(config.min_steps..=config.max_steps);
            let task = TASKS[rng.gen_range(0..TASKS.len())];
            let title = format!("Synthetic {task} {k:03} for {domain}");

            let mut steps = Vec::with_capacity(length);
            for j in 1..=length {
                let verb = VERBS[rng.gen_range(0..VERBS.len())];
                let object = OBJECTS[rng.gen_range(0..OBJECTS.len())];
                // The id suffix keeps step texts globally unique.
                let text = format!("{verb} the {object} for stage {j} of {proc_id}.");
                let image_refs: Vec<String> = (0..config.images_per_step)
                    .map(|n| format!("img-{proc_id}-s{j}-{n}"))
                    .collect();
                for image in &image_refs {
                    let noise = unit_vector(&mut rng, dim);
                    image_embeddings
                        .insert(
                            EmbeddingVector::new(image.clone(), blend(&proc_center, &noise, 0.25))
                                .with_domain(domain.clone()),
                        )
                        .expect("unique image ids");
                    ledger.images += 1;
                    if j < length {
                        *ledger
                            .per_domain_expected_instances
                            .entry(domain.clone())
                            .or_insert(0) += 1;
                    }
                }
                let step_noise = unit_vector(&mut rng, dim);
                text_embeddings
                    .insert(
                        EmbeddingVector::new(
                            text_embedding_key(&text),
                            blend(&proc_center, &step_noise, 0.4),
                        )
                        .with_domain(domain.clone()),
                    )
                    .expect("unique step texts");
                steps.push(Step::new(j as u32, text).with_images(image_refs));
            }

            let proc_noise = unit_vector(&mut rng, dim);
            text_embeddings
                .insert(
                    EmbeddingVector::new(proc_id.clone(), blend(&proc_center, &proc_noise, 0.1))
                        .with_domain(domain.clone()),
                )
                .expect("unique procedure ids");

            *ledger
                .per_domain_procedures
                .entry(domain.clone())
                .or_insert(0) += 1;
            *ledger.length_histogram.entry(length as u32).or_insert(0) += 1;
            ledger.procedures += 1;
            corpus.push(Procedure::new(proc_id, domain.clone(), title, steps));
        }
    }

    SynthOutput {
        corpus,
        image_embeddings,
        text_embeddings,
        ledger,
    }
}
