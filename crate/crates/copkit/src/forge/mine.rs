//! Hard-negative mining: distractor procedures whose images are visually
//! proximate to the query (top-k cosine) or uniformly sampled, always
//! intra-domain and never from the positive's procedure.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::embed::EmbeddingStore;
use crate::model::VisualState;
use crate::util::stable_seed;

use super::{CorpusIndex, ForgeConfig, ForgeError, NegativeStrategy};

/// Mines `num_candidates - 1` distractor procedure ids for a visual query.
///
/// Both strategies draw from the same eligible pool: store images tagged
/// with the query's domain, mapped to a known procedure that differs from
/// the positive. `topk` ranks images by cosine against the query and lifts
/// them to procedures (deduplicated, first hit wins); `random` samples
/// distinct eligible procedures uniformly with a seed derived from the
/// query image.
pub fn mine_negatives(
    visual: &VisualState,
    store: &EmbeddingStore,
    corpus: &CorpusIndex,
    config: &ForgeConfig,
) -> Result<Vec<String>, ForgeError> {
    let needed = config.num_candidates.saturating_sub(1);
    if needed == 0 {
        return Ok(Vec::new());
    }
    if !store.contains(&visual.image_id) {
        return Err(ForgeError::MissingEmbedding {
            id: visual.image_id.clone(),
        });
    }
    let domain = store.tag(&visual.image_id).unwrap_or_default().to_string();
    let eligible = |id: &str| {
        store.tag(id) == Some(domain.as_str())
            && corpus
                .procedure_for_image(id)
                .is_some_and(|proc_id| proc_id != visual.source_procedure)
    };

    let picked = match config.negative_strategy {
        NegativeStrategy::Topk => {
            let depth = if config.mining_k == 0 {
                store.len()
            } else {
                config.mining_k
            };
            let ranked = store.top_k_similar(&visual.image_id, depth, eligible)?;
            let mut procedures: Vec<String> = Vec::with_capacity(needed);
            for (image_id, _score) in ranked {
                let proc_id = corpus
                    .procedure_for_image(&image_id)
                    .expect("eligible images map to procedures");
                if !procedures.iter().any(|p| p == proc_id) {
                    procedures.push(proc_id.to_string());
                    if procedures.len() == needed {
                        break;
                    }
                }
            }
            procedures
        }
        NegativeStrategy::Random => {
            // Distinct eligible procedures in sorted order, then a seeded
            // partial Fisher-Yates over that pool.
            let mut pool: Vec<String> = Vec::new();
            for entry in store.iter() {
                if entry.id != visual.image_id && eligible(&entry.id) {
                    let proc_id = corpus
                        .procedure_for_image(&entry.id)
                        .expect("eligible images map to procedures")
                        .to_string();
                    if !pool.contains(&proc_id) {
                        pool.push(proc_id);
                    }
                }
            }
            pool.sort();
            let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(
                config.seed,
                &["negatives", &visual.image_id],
            ));
            let take = needed.min(pool.len());
            for i in 0..take {
                let j = rng.gen_range(i..pool.len());
                pool.swap(i, j);
            }
            pool.truncate(take);
            pool
        }
    };

    if picked.len() < needed {
        return Err(ForgeError::InsufficientPool {
            image_id: visual.image_id.clone(),
            needed,
            found: picked.len(),
        });
    }
    Ok(picked)
}
