//! Train/test splitting: OOD domains are held out entirely for test, the
//! rest is stratified by positive-procedure step length and ratio-split
//! per stratum.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::util::stable_seed;

use super::Instance;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Domains held out entirely for test.
    pub ood_domains: BTreeSet<String>,
    /// Fraction of each in-domain stratum assigned to train.
    pub train_ratio: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ood_domains: BTreeSet::new(),
            train_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SplitOutcome {
    pub train: Vec<Instance>,
    pub test: Vec<Instance>,
    pub warnings: Vec<String>,
}

/// Splits instances: OOD domains go wholly to test, the rest stratifies by
/// positive step length and ratio-splits per stratum. Strata with fewer
/// than two instances merge into the neighboring stratum with a warning.
pub fn split_dataset(instances: &[Instance], spec: &SplitSpec, seed: u64) -> SplitOutcome {
    let mut outcome = SplitOutcome::default();
    let mut strata: BTreeMap<u32, Vec<Instance>> = BTreeMap::new();
    for instance in instances {
        if spec.ood_domains.contains(&instance.meta.domain) {
            outcome.test.push(instance.clone());
        } else {
            strata
                .entry(instance.meta.positive_len)
                .or_default()
                .push(instance.clone());
        }
    }

    // Merge undersized strata into their successor (or predecessor for the
    // last one) so every stratum can contribute to both sides.
    let lengths: Vec<u32> = strata.keys().copied().collect();
    let mut merged: Vec<(u32, Vec<Instance>)> = Vec::new();
    for len in lengths {
        let group = strata.remove(&len).expect("stratum present");
        if group.len() < 2 {
            outcome.warnings.push(format!(
                "stratum for step length {len} has {} instance(s); merged into neighbor",
                group.len()
            ));
            if let Some(last) = merged.last_mut() {
                last.1.extend(group);
            } else {
                merged.push((len, group));
            }
        } else if let Some(last) = merged.last_mut() {
            if last.1.len() < 2 {
                // A leading undersized stratum merges forward.
                let mut carried = std::mem::take(&mut last.1);
                carried.extend(group);
                *last = (len, carried);
            } else {
                merged.push((len, group));
            }
        } else {
            merged.push((len, group));
        }
    }

    for (len, mut group) in merged {
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(stable_seed(seed, &["split", &len.to_string()]));
        for i in (1..group.len()).rev() {
            let j = rng.gen_range(0..=i);
            group.swap(i, j);
        }
        let n_train = (group.len() as f64 * spec.train_ratio).round() as usize;
        for (pos, instance) in group.into_iter().enumerate() {
            if pos < n_train {
                outcome.train.push(instance);
            } else {
                outcome.test.push(instance);
            }
        }
    }

    outcome.train.sort_by(|a, b| a.id.cmp(&b.id));
    outcome.test.sort_by(|a, b| a.id.cmp(&b.id));
    outcome
}
