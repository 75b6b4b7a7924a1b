//! Granularity simulation: probabilistic fusion of consecutive atomic steps
//! into coarse instructions via a greedy left-to-right scan. Merged steps
//! never re-merge within a pass, so fused runs have size 1 or 2.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Procedure, Step};

/// Maps each fused step back to the original atomic step indices it covers.
/// `groups[i]` holds the 1-based original indices of fused step `i + 1`;
/// groups are contiguous runs of size 1 or 2 partitioning `1..=L`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alignment {
    pub groups: Vec<Vec<u32>>,
}

impl Alignment {
    pub fn identity(len: usize) -> Self {
        Self {
            groups: (1..=len as u32).map(|i| vec![i]).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.groups
            .iter()
            .enumerate()
            .all(|(i, group)| group.len() == 1 && group[0] == i as u32 + 1)
    }

    /// Original 1-based indices covered by 1-based fused index.
    pub fn originals_for(&self, fused_index: u32) -> &[u32] {
        self.groups
            .get(fused_index as usize - 1)
            .map(|g| g.as_slice())
            .unwrap_or(&[])
    }

    /// 1-based fused index containing the 1-based original index, if any.
    pub fn fused_for(&self, original_index: u32) -> Option<u32> {
        self.groups
            .iter()
            .position(|group| group.contains(&original_index))
            .map(|pos| pos as u32 + 1)
    }

    pub fn original_len(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }
}

fn trim_terminal_periods(text: &str) -> &str {
    text.trim_end().trim_end_matches('.').trim_end()
}

/// Joins two step texts into one coarse instruction.
pub fn join_step_texts(first: &str, second: &str) -> String {
    format!(
        "{}. {}",
        trim_terminal_periods(first),
        trim_terminal_periods(second)
    )
}

/// Greedy left-to-right step fusion. At each unconsumed position, with
/// probability `p` the step is merged with its successor (advancing by two),
/// otherwise it is kept (advancing by one). Returns the fused procedure and
/// the fused-to-atomic alignment. Deterministic in (procedure, p, seed).
pub fn fuse_steps(procedure: &Procedure, p: f64, seed: u64) -> (Procedure, Alignment) {
    assert!(
        (0.0..=1.0).contains(&p),
        "fusion probability must lie in [0, 1], got {p}"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = &procedure.steps;
    let mut fused: Vec<Step> = Vec::with_capacity(steps.len());
    let mut groups: Vec<Vec<u32>> = Vec::with_capacity(steps.len());
    let mut i = 0;
    while i < steps.len() {
        let merge = i + 1 < steps.len() && p > 0.0 && rng.gen_bool(p);
        if merge {
            let (a, b) = (&steps[i], &steps[i + 1]);
            let mut image_refs = a.image_refs.clone();
            image_refs.extend(b.image_refs.iter().cloned());
            fused.push(Step {
                index: fused.len() as u32 + 1,
                text: join_step_texts(&a.text, &b.text),
                image_refs,
                atomic: false,
            });
            groups.push(vec![a.index, b.index]);
            i += 2;
        } else {
            let mut step = steps[i].clone();
            step.index = fused.len() as u32 + 1;
            fused.push(step);
            groups.push(vec![steps[i].index]);
            i += 1;
        }
    }
    (
        Procedure {
            id: procedure.id.clone(),
            domain: procedure.domain.clone(),
            title: procedure.title.clone(),
            steps: fused,
        },
        Alignment { groups },
    )
}
