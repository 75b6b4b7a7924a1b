//! Transforms a procedural corpus into evaluation instances: step fusion,
//! embedding-based negative mining, instance assembly, dataset splits, and
//! corpus statistics.

mod fuse;
mod mine;
mod split;
mod stats;

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fuse::{fuse_steps, join_step_texts, Alignment};
pub use mine::mine_negatives;
pub use split::{split_dataset, SplitOutcome, SplitSpec};
pub use stats::{
    corpus_stats, semantic_overlap, HistogramBin, OverlapReport, SplitStats, StatsTable,
};

use crate::embed::{EmbedError, EmbeddingStore};
use crate::model::{validate_procedure, Procedure, Step, VisualState};
use crate::util::stable_seed;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("unknown procedure {0:?}")]
    UnknownProcedure(String),
    #[error("no embedding for id {id:?}")]
    MissingEmbedding { id: String },
    #[error("insufficient negative pool for image {image_id:?}: needed {needed}, found {found}")]
    InsufficientPool {
        image_id: String,
        needed: usize,
        found: usize,
    },
    #[error("visual state {image_id:?} is invalid: after_step {after_step} of {len} steps")]
    InvalidVisualState {
        image_id: String,
        after_step: u32,
        len: usize,
    },
    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeStrategy {
    Topk,
    Random,
}

/// Construction parameters. Defaults reproduce the reference construction:
/// fusion probability 0.5, three candidates, top-k hard negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgeConfig {
    pub fusion_probability: f64,
    pub num_candidates: usize,
    pub negative_strategy: NegativeStrategy,
    /// Ranked-scan depth for top-k mining; 0 means unbounded (exact over
    /// the whole eligible pool).
    pub mining_k: usize,
    pub seed: u64,
    pub ood_domains: BTreeSet<String>,
    /// When false, fusion applies to the positive only and distractor
    /// procedures are presented atomically.
    pub fuse_all_candidates: bool,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            fusion_probability: 0.5,
            num_candidates: 3,
            negative_strategy: NegativeStrategy::Topk,
            mining_k: 0,
            seed: 0,
            ood_domains: BTreeSet::new(),
            fuse_all_candidates: true,
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ForgeError> {
        if !(0.0..=1.0).contains(&self.fusion_probability) {
            return Err(ForgeError::InvalidConfig(format!(
                "fusion_probability must lie in [0, 1], got {}",
                self.fusion_probability
            )));
        }
        if self.num_candidates < 2 {
            return Err(ForgeError::InvalidConfig(
                "num_candidates must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// One candidate in an instance: a procedure as presented to the model
/// (possibly fused).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProcedure {
    pub procedure_id: String,
    pub steps: Vec<Step>,
}

impl CandidateProcedure {
    pub fn step_texts(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub domain: String,
    /// Atomic step count of the positive procedure (pre-fusion).
    pub positive_len: u32,
    pub fusion_probability: f64,
    pub negative_strategy: NegativeStrategy,
    pub seed: u64,
    /// Fused-to-atomic alignment of the positive candidate.
    pub alignment: Vec<Vec<u32>>,
}

/// One evaluation tuple: a query image, N candidate procedures (exactly one
/// positive), the positive's index, and the gold next step drawn from the
/// original atomic sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub image: String,
    pub after_step: u32,
    pub candidates: Vec<CandidateProcedure>,
    pub label: u32,
    pub gold_next_step: String,
    pub meta: InstanceMeta,
}

impl Instance {
    pub fn positive(&self) -> &CandidateProcedure {
        &self.candidates[self.label as usize]
    }

    pub fn visual(&self) -> VisualState {
        VisualState {
            image_id: self.image.clone(),
            source_procedure: self.positive().procedure_id.clone(),
            after_step: self.after_step,
        }
    }

    pub fn positive_alignment(&self) -> Alignment {
        Alignment {
            groups: self.meta.alignment.clone(),
        }
    }
}

/// A corpus indexed by procedure id and by image id.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    procedures: BTreeMap<String, Procedure>,
    image_to_procedure: BTreeMap<String, String>,
}

impl CorpusIndex {
    pub fn build(corpus: Vec<Procedure>) -> Result<Self, ForgeError> {
        let mut index = Self::default();
        for procedure in corpus {
            if index.procedures.contains_key(&procedure.id) {
                return Err(ForgeError::InvalidCorpus(format!(
                    "duplicate procedure id {:?}",
                    procedure.id
                )));
            }
            for step in &procedure.steps {
                for image in &step.image_refs {
                    if let Some(existing) = index.image_to_procedure.get(image) {
                        return Err(ForgeError::InvalidCorpus(format!(
                            "image {image:?} referenced by both {existing:?} and {:?}",
                            procedure.id
                        )));
                    }
                    index
                        .image_to_procedure
                        .insert(image.clone(), procedure.id.clone());
                }
            }
            index.procedures.insert(procedure.id.clone(), procedure);
        }
        Ok(index)
    }

    pub fn get(&self, id: &str) -> Option<&Procedure> {
        self.procedures.get(id)
    }

    pub fn procedure_for_image(&self, image_id: &str) -> Option<&str> {
        self.image_to_procedure.get(image_id).map(|s| s.as_str())
    }

    pub fn procedures(&self) -> impl Iterator<Item = &Procedure> {
        self.procedures.values()
    }

    pub fn len(&self) -> usize {
        self.procedures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.procedures.is_empty()
    }
}

fn candidate_from(
    procedure: &Procedure,
    config: &ForgeConfig,
    fuse: bool,
) -> (CandidateProcedure, Alignment) {
    if fuse && config.fusion_probability > 0.0 {
        let seed = stable_seed(config.seed, &["fuse", &procedure.id]);
        let (fused, alignment) = fuse_steps(procedure, config.fusion_probability, seed);
        (
            CandidateProcedure {
                procedure_id: fused.id.clone(),
                steps: fused.steps,
            },
            alignment,
        )
    } else {
        (
            CandidateProcedure {
                procedure_id: procedure.id.clone(),
                steps: procedure.steps.clone(),
            },
            Alignment::identity(procedure.steps.len()),
        )
    }
}

/// Assembles one instance for a visual state: mines distractors, applies
/// fusion, shuffles candidate order with a position-derived seed, and
/// extracts the gold next step from the original atomic sequence.
pub fn build_instance(
    visual: &VisualState,
    corpus: &CorpusIndex,
    store: &EmbeddingStore,
    config: &ForgeConfig,
) -> Result<Instance, ForgeError> {
    config.validate()?;
    let positive = corpus
        .get(&visual.source_procedure)
        .ok_or_else(|| ForgeError::UnknownProcedure(visual.source_procedure.clone()))?;
    if visual.after_step == 0 || (visual.after_step as usize) >= positive.steps.len() {
        return Err(ForgeError::InvalidVisualState {
            image_id: visual.image_id.clone(),
            after_step: visual.after_step,
            len: positive.steps.len(),
        });
    }
    let negative_ids = mine_negatives(visual, store, corpus, config)?;

    let (positive_candidate, alignment) = candidate_from(positive, config, true);
    let mut candidates = vec![positive_candidate];
    for id in &negative_ids {
        let negative = corpus
            .get(id)
            .ok_or_else(|| ForgeError::UnknownProcedure(id.clone()))?;
        let (candidate, _) = candidate_from(negative, config, config.fuse_all_candidates);
        candidates.push(candidate);
    }

    // Position-bias control: seeded shuffle of candidate order.
    let instance_id = format!("inst-{}-t{}", visual.image_id, visual.after_step);
    let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(config.seed, &["order", &instance_id]));
    for i in (1..candidates.len()).rev() {
        let j = rng.gen_range(0..=i);
        candidates.swap(i, j);
    }
    let label = candidates
        .iter()
        .position(|c| c.procedure_id == visual.source_procedure)
        .expect("positive candidate present") as u32;

    let gold_next_step = positive.steps[visual.after_step as usize].text.clone();

    Ok(Instance {
        id: instance_id,
        image: visual.image_id.clone(),
        after_step: visual.after_step,
        candidates,
        label,
        gold_next_step,
        meta: InstanceMeta {
            domain: positive.domain.clone(),
            positive_len: positive.steps.len() as u32,
            fusion_probability: config.fusion_probability,
            negative_strategy: config.negative_strategy,
            seed: config.seed,
            alignment: alignment.groups,
        },
    })
}

/// Full forge pass over a corpus: one instance per (benchmark-eligible
/// procedure, non-final step, attached image). Ineligible procedures and
/// unminable visuals are skipped with a reason.
#[derive(Debug, Clone, Default)]
pub struct ForgeOutput {
    pub instances: Vec<Instance>,
    pub skipped: Vec<(String, String)>,
}

pub fn forge_dataset(
    corpus: &CorpusIndex,
    store: &EmbeddingStore,
    config: &ForgeConfig,
) -> Result<ForgeOutput, ForgeError> {
    config.validate()?;
    let mut output = ForgeOutput::default();
    for procedure in corpus.procedures() {
        let report = validate_procedure(procedure);
        if !report.is_valid() {
            output.skipped.push((
                procedure.id.clone(),
                format!(
                    "ineligible procedure: {} violation(s)",
                    report.violations.len()
                ),
            ));
            continue;
        }
        for step in &procedure.steps {
            if step.index as usize >= procedure.steps.len() {
                continue; // final step: no next step exists
            }
            for image in &step.image_refs {
                let visual = VisualState {
                    image_id: image.clone(),
                    source_procedure: procedure.id.clone(),
                    after_step: step.index,
                };
                match build_instance(&visual, corpus, store, config) {
                    Ok(instance) => output.instances.push(instance),
                    Err(err @ ForgeError::InsufficientPool { .. })
                    | Err(err @ ForgeError::MissingEmbedding { .. }) => {
                        output.skipped.push((image.clone(), err.to_string()));
                    }
                    Err(err) => return Err(err),
                }
            }
        }
    }
    output.instances.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(output)
}
