//! Dataset statistics and train/test semantic-overlap measurement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingStore, EmbeddingVector};

use super::{ForgeError, Instance};

/// Per-split statistics over positive-procedure step lengths and domains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub name: String,
    pub total_samples: usize,
    pub mean_step_length: f64,
    pub step_length_std: f64,
    pub min_step_length: u32,
    pub max_step_length: u32,
    pub domain_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub splits: Vec<SplitStats>,
}

fn split_stats(name: &str, instances: &[Instance]) -> SplitStats {
    let lengths: Vec<f64> = instances
        .iter()
        .map(|i| i.meta.positive_len as f64)
        .collect();
    let total = lengths.len();
    let mean = if total > 0 {
        lengths.iter().sum::<f64>() / total as f64
    } else {
        0.0
    };
    // Population standard deviation.
    let std = if total > 0 {
        (lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / total as f64).sqrt()
    } else {
        0.0
    };
    let mut domain_counts = BTreeMap::new();
    for instance in instances {
        *domain_counts
            .entry(instance.meta.domain.clone())
            .or_insert(0) += 1;
    }
    SplitStats {
        name: name.to_string(),
        total_samples: total,
        mean_step_length: mean,
        step_length_std: std,
        min_step_length: instances
            .iter()
            .map(|i| i.meta.positive_len)
            .min()
            .unwrap_or(0),
        max_step_length: instances
            .iter()
            .map(|i| i.meta.positive_len)
            .max()
            .unwrap_or(0),
        domain_counts,
    }
}

/// Computes the statistics table for named splits plus a combined "total"
/// row.
pub fn corpus_stats(splits: &[(&str, &[Instance])]) -> StatsTable {
    let mut table = StatsTable::default();
    let mut all: Vec<Instance> = Vec::new();
    for (name, instances) in splits {
        table.splits.push(split_stats(name, instances));
        all.extend_from_slice(instances);
    }
    table.splits.push(split_stats("total", &all));
    table
}

impl StatsTable {
    /// Aligned-column text rendering.
    pub fn to_text(&self) -> String {
        let mut domains: Vec<String> = Vec::new();
        for split in &self.splits {
            for domain in split.domain_counts.keys() {
                if !domains.contains(domain) {
                    domains.push(domain.clone());
                }
            }
        }
        domains.sort();
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["metric".to_string()];
        header.extend(self.splits.iter().map(|s| s.name.clone()));
        rows.push(header);
        let metric_row = |label: &str, f: &dyn Fn(&SplitStats) -> String| {
            let mut row = vec![label.to_string()];
            row.extend(self.splits.iter().map(f));
            row
        };
        rows.push(metric_row("total_samples", &|s| {
            s.total_samples.to_string()
        }));
        rows.push(metric_row("mean_step_length", &|s| {
            format!("{:.2}", s.mean_step_length)
        }));
        rows.push(metric_row("step_length_std", &|s| {
            format!("{:.2}", s.step_length_std)
        }));
        rows.push(metric_row("min_step_length", &|s| {
            s.min_step_length.to_string()
        }));
        rows.push(metric_row("max_step_length", &|s| {
            s.max_step_length.to_string()
        }));
        for domain in &domains {
            rows.push(metric_row(&format!("domain:{domain}"), &|s| {
                s.domain_counts
                    .get(domain)
                    .copied()
                    .unwrap_or(0)
                    .to_string()
            }));
        }
        crate::util::render_aligned_table(&rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Train/test semantic overlap: for every test item the maximum cosine
/// against all train items, summarized by the median and a histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub median_cosine: f64,
    pub histogram: Vec<HistogramBin>,
    pub pairs: usize,
}

fn embedding_for<'a>(
    instance: &Instance,
    store: &'a EmbeddingStore,
) -> Result<&'a EmbeddingVector, ForgeError> {
    // Granularity follows whatever the supplied store encodes: instance-level
    // entries win, procedure-level entries are the fallback.
    store
        .get(&instance.id)
        .or_else(|| store.get(&instance.positive().procedure_id))
        .ok_or_else(|| ForgeError::MissingEmbedding {
            id: instance.id.clone(),
        })
}

pub fn semantic_overlap(
    train: &[Instance],
    test: &[Instance],
    text_store: &EmbeddingStore,
) -> Result<OverlapReport, ForgeError> {
    if train.is_empty() || test.is_empty() {
        return Err(ForgeError::InvalidConfig(
            "semantic overlap needs non-empty train and test splits".into(),
        ));
    }
    let train_vecs: Vec<&EmbeddingVector> = train
        .iter()
        .map(|i| embedding_for(i, text_store))
        .collect::<Result<_, _>>()?;
    let mut maxima = Vec::with_capacity(test.len());
    for item in test {
        let tv = embedding_for(item, text_store)?;
        let mut best = f64::NEG_INFINITY;
        for train_vec in &train_vecs {
            best = best.max(cosine_similarity(tv, train_vec)?);
        }
        maxima.push(best);
    }
    maxima.sort_by(|a, b| a.partial_cmp(b).expect("finite cosines"));
    let median = if maxima.len() % 2 == 1 {
        maxima[maxima.len() / 2]
    } else {
        (maxima[maxima.len() / 2 - 1] + maxima[maxima.len() / 2]) / 2.0
    };
    let bins = 20usize;
    let mut histogram: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: -1.0 + 2.0 * b as f64 / bins as f64,
            hi: -1.0 + 2.0 * (b + 1) as f64 / bins as f64,
            count: 0,
        })
        .collect();
    for value in &maxima {
        let slot = (((value + 1.0) / 2.0 * bins as f64).floor() as usize).min(bins - 1);
        histogram[slot].count += 1;
    }
    Ok(OverlapReport {
        median_cosine: median,
        histogram,
        pairs: maxima.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{CandidateProcedure, InstanceMeta, NegativeStrategy};
    use crate::model::Step;

    fn instance(id: &str, domain: &str, len: u32) -> Instance {
        Instance {
            id: id.to_string(),
            image: format!("img-{id}"),
            after_step: 1,
            candidates: vec![CandidateProcedure {
                procedure_id: format!("proc-{id}"),
                steps: vec![Step::new(1, "a"), Step::new(2, "b")],
            }],
            label: 0,
            gold_next_step: "b".into(),
            meta: InstanceMeta {
                domain: domain.to_string(),
                positive_len: len,
                fusion_probability: 0.5,
                negative_strategy: NegativeStrategy::Topk,
                seed: 0,
                alignment: vec![vec![1], vec![2]],
            },
        }
    }

    #[test]
    fn single_length_split_has_zero_std() {
        let split = [instance("a", "cars", 5)];
        let table = corpus_stats(&[("train", &split)]);
        let row = &table.splits[0];
        assert_eq!(row.total_samples, 1);
        assert_eq!(row.mean_step_length, 5.0);
        assert_eq!(row.step_length_std, 0.0);
        assert_eq!(row.min_step_length, 5);
        assert_eq!(row.max_step_length, 5);
    }

    #[test]
    fn two_lengths_use_population_std() {
        let split = [instance("a", "cars", 3), instance("b", "cars", 7)];
        let table = corpus_stats(&[("test", &split)]);
        let row = &table.splits[0];
        assert_eq!(row.mean_step_length, 5.0);
        assert_eq!(row.step_length_std, 2.0);
    }

    #[test]
    fn domain_counts_and_total_row() {
        let train = [instance("a", "cars", 3), instance("b", "work", 4)];
        let test = [instance("c", "cars", 5)];
        let table = corpus_stats(&[("train", &train), ("test", &test)]);
        assert_eq!(table.splits.len(), 3);
        let total = table.splits.last().unwrap();
        assert_eq!(total.total_samples, 3);
        assert_eq!(total.domain_counts["cars"], 2);
        assert_eq!(total.domain_counts["work"], 1);
        let text = table.to_text();
        assert!(text.contains("domain:cars"));
        assert!(text.contains("total_samples"));
    }

    fn store_with(entries: &[(&str, Vec<f32>)]) -> EmbeddingStore {
        let mut store = EmbeddingStore::new();
        for (id, v) in entries {
            store.insert(EmbeddingVector::new(*id, v.clone())).unwrap();
        }
        store
    }

    #[test]
    fn identical_splits_overlap_at_one() {
        let train = [instance("a", "cars", 3), instance("b", "cars", 4)];
        let test = train.clone();
        let store = store_with(&[("a", vec![1.0, 0.0]), ("b", vec![0.5, 0.5])]);
        let report = semantic_overlap(&train, &test, &store).unwrap();
        assert!((report.median_cosine - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_one_hot_overlap_is_zero() {
        let train = [instance("a", "cars", 3)];
        let test = [instance("b", "cars", 3)];
        let store = store_with(&[("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]);
        let report = semantic_overlap(&train, &test, &store).unwrap();
        assert_eq!(report.median_cosine, 0.0);
    }

    #[test]
    fn overlap_matches_double_loop_oracle() {
        let train: Vec<Instance> = (0..5)
            .map(|i| instance(&format!("t{i}"), "cars", 3))
            .collect();
        let test: Vec<Instance> = (0..4)
            .map(|i| instance(&format!("u{i}"), "cars", 3))
            .collect();
        let mut entries = Vec::new();
        for (i, item) in train.iter().chain(test.iter()).enumerate() {
            let a = i as f32 * 0.61;
            entries.push((item.id.clone(), vec![a.cos(), a.sin(), 0.2 * a]));
        }
        let store = {
            let mut s = EmbeddingStore::new();
            for (id, v) in &entries {
                s.insert(EmbeddingVector::new(id.clone(), v.clone()))
                    .unwrap();
            }
            s
        };
        let report = semantic_overlap(&train, &test, &store).unwrap();

        let mut maxima = Vec::new();
        for u in &test {
            let uv = store.get(&u.id).unwrap();
            let mut best = f64::NEG_INFINITY;
            for t in &train {
                let tv = store.get(&t.id).unwrap();
                best = best.max(cosine_similarity(uv, tv).unwrap());
            }
            maxima.push(best);
        }
        maxima.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = (maxima[1] + maxima[2]) / 2.0;
        assert!((report.median_cosine - expected).abs() < 1e-12);
        let total: usize = report.histogram.iter().map(|b| b.count).sum();
        assert_eq!(total, 4);
    }

    #[test]
    fn missing_embedding_is_reported() {
        let train = [instance("a", "cars", 3)];
        let test = [instance("zzz", "cars", 3)];
        let store = store_with(&[("a", vec![1.0, 0.0])]);
        assert!(matches!(
            semantic_overlap(&train, &test, &store),
            Err(ForgeError::MissingEmbedding { .. })
        ));
    }

    #[test]
    fn procedure_level_fallback_lookup() {
        let train = [instance("a", "cars", 3)];
        let test = [instance("b", "cars", 3)];
        // Only procedure-level entries present.
        let store = store_with(&[("proc-a", vec![1.0, 0.0]), ("proc-b", vec![1.0, 0.1])]);
        let report = semantic_overlap(&train, &test, &store).unwrap();
        assert!(report.median_cosine > 0.9);
    }
}
