//! Fixed-dimension vector storage with cosine similarity and exact top-k
//! search. Backs negative mining, retrieval-only pipeline variants, and
//! semantic-overlap statistics. Vectors are produced externally; this module
//! only stores and queries them.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{self, JsonlError};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: expected {expected}, got {found} for id {id:?}")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        id: String,
    },
    #[error("all-zero vector for id {0:?}")]
    ZeroVector(String),
    #[error("non-finite component in vector for id {0:?}")]
    NonFinite(String),
    #[error("unknown id {0:?}")]
    UnknownId(String),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
}

/// A named embedding with an optional domain tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub id: String,
    #[serde(default)]
    pub domain: String,
    pub vector: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(id: impl Into<String>, vector: Vec<f32>) -> Self {
        Self {
            id: id.into(),
            domain: String::new(),
            vector,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = domain.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Immutable-after-load vector store with uniform dimensionality.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    entries: Vec<EmbeddingVector>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Uniform dimension of the stored vectors; `None` when empty.
    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn insert(&mut self, entry: EmbeddingVector) -> Result<(), EmbedError> {
        if let Some(expected) = self.dim() {
            if entry.vector.len() != expected {
                return Err(EmbedError::DimensionMismatch {
                    expected,
                    found: entry.vector.len(),
                    id: entry.id,
                });
            }
        }
        if entry.vector.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(entry.id));
        }
        if self.by_id.contains_key(&entry.id) {
            return Err(EmbedError::DuplicateId(entry.id));
        }
        self.by_id.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(())
    }

    /// Inserts, replacing any existing entry with the same id.
    pub fn upsert(&mut self, entry: EmbeddingVector) -> Result<(), EmbedError> {
        if let Some(&pos) = self.by_id.get(&entry.id) {
            if let Some(expected) = self.dim() {
                if entry.vector.len() != expected {
                    return Err(EmbedError::DimensionMismatch {
                        expected,
                        found: entry.vector.len(),
                        id: entry.id,
                    });
                }
            }
            self.entries[pos] = entry;
            Ok(())
        } else {
            self.insert(entry)
        }
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingVector> {
        self.by_id.get(id).map(|&pos| &self.entries[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Domain tag for an id, if present.
    pub fn tag(&self, id: &str) -> Option<&str> {
        self.get(id).map(|e| e.domain.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &EmbeddingVector> {
        self.entries.iter()
    }

    /// Exact top-k by cosine among entries passing `filter`, excluding the
    /// query itself. Ties break by ascending id; fewer than `k` items are
    /// returned when the filtered pool is small.
    pub fn top_k_similar(
        &self,
        query_id: &str,
        k: usize,
        mut filter: impl FnMut(&str) -> bool,
    ) -> Result<Vec<(String, f64)>, EmbedError> {
        let query = self
            .get(query_id)
            .ok_or_else(|| EmbedError::UnknownId(query_id.to_string()))?;
        let mut scored: Vec<(String, f64)> = Vec::new();
        for entry in &self.entries {
            if entry.id == query_id || !filter(&entry.id) {
                continue;
            }
            let score = cosine_similarity(query, entry)?;
            scored.push((entry.id.clone(), score));
        }
        scored.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .expect("finite scores")
                .then_with(|| a.0.cmp(&b.0))
        });
        scored.truncate(k);
        Ok(scored)
    }
}

/// Standard cosine similarity, accumulated in f64. Symmetric and
/// scale-invariant for positive scaling.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.vector.len() != b.vector.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.vector.len(),
            found: b.vector.len(),
            id: b.id.clone(),
        });
    }
    let mut dot = 0f64;
    let mut norm_a = 0f64;
    let mut norm_b = 0f64;
    for (x, y) in a.vector.iter().zip(&b.vector) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 {
        return Err(EmbedError::ZeroVector(a.id.clone()));
    }
    if norm_b == 0.0 {
        return Err(EmbedError::ZeroVector(b.id.clone()));
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Loads a store from embeddings JSONL (`{"id","domain","vector"}` per line,
/// optionally gzip-compressed). Dimension consistency is enforced.
pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, EmbedError> {
    let entries: Vec<EmbeddingVector> = util::read_jsonl(path)?;
    let mut store = EmbeddingStore::new();
    for entry in entries {
        store.insert(entry)?;
    }
    Ok(store)
}

/// Writes a store to embeddings JSONL (gzip when the path ends in `.gz`).
pub fn save_store(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<(), EmbedError> {
    util::write_jsonl(path, &store.entries)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vecf(id: &str, values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(id, values.to_vec())
    }

    #[test]
    fn cosine_self_similarity_is_one() {
        let v = vecf("a", &[0.3, -1.2, 4.0]);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_orthogonal_is_zero() {
        let a = vecf("a", &[1.0, 0.0]);
        let b = vecf("b", &[0.0, 1.0]);
        assert_eq!(cosine_similarity(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn cosine_matches_direct_formula() {
        // Independent evaluation of dot/(|a||b|) for [1,2,3] and [4,5,6]:
        // 32 / sqrt(14 * 77) = 0.9746318461970762.
        let a = vecf("a", &[1.0, 2.0, 3.0]);
        let b = vecf("b", &[4.0, 5.0, 6.0]);
        let got = cosine_similarity(&a, &b).unwrap();
        assert!((got - 0.974_631_846_197_076_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_zero_vectors_and_dim_mismatch() {
        let a = vecf("a", &[1.0, 2.0]);
        let zero = vecf("z", &[0.0, 0.0]);
        assert!(matches!(
            cosine_similarity(&a, &zero),
            Err(EmbedError::ZeroVector(_))
        ));
        let c = vecf("c", &[1.0, 2.0, 3.0]);
        assert!(matches!(
            cosine_similarity(&a, &c),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn top_k_saturates_on_small_pools() {
        let mut store = EmbeddingStore::new();
        store.insert(vecf("q", &[1.0, 0.0])).unwrap();
        store.insert(vecf("a", &[1.0, 1.0])).unwrap();
        store.insert(vecf("b", &[0.0, 1.0])).unwrap();
        let hits = store.top_k_similar("q", 10, |_| true).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].0, "a");
    }

    #[test]
    fn top_k_ranks_duplicate_of_query_first() {
        let mut store = EmbeddingStore::new();
        store.insert(vecf("q", &[0.4, 0.6])).unwrap();
        store.insert(vecf("far", &[-0.4, 0.1])).unwrap();
        store.insert(vecf("dup", &[0.4, 0.6])).unwrap();
        let hits = store.top_k_similar("q", 1, |_| true).unwrap();
        assert_eq!(hits[0].0, "dup");
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_breaks_ties_by_ascending_id() {
        let mut store = EmbeddingStore::new();
        store.insert(vecf("q", &[1.0, 0.0])).unwrap();
        store.insert(vecf("b", &[2.0, 0.0])).unwrap();
        store.insert(vecf("a", &[3.0, 0.0])).unwrap();
        let hits = store.top_k_similar("q", 2, |_| true).unwrap();
        assert_eq!(hits[0].0, "a");
        assert_eq!(hits[1].0, "b");
    }

    #[test]
    fn top_k_unknown_query_errors() {
        let store = EmbeddingStore::new();
        assert!(matches!(
            store.top_k_similar("nope", 1, |_| true),
            Err(EmbedError::UnknownId(_))
        ));
    }

    #[test]
    fn load_empty_file_gives_empty_store() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let store = load_store(&path).unwrap();
        assert!(store.is_empty());
        assert_eq!(store.dim(), None);
    }

    #[test]
    fn load_mixed_dims_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mixed.jsonl");
        std::fs::write(
            &path,
            "{\"id\":\"a\",\"vector\":[1.0,2.0]}\n{\"id\":\"b\",\"vector\":[1.0]}\n",
        )
        .unwrap();
        assert!(matches!(
            load_store(&path),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.jsonl.gz");
        let mut store = EmbeddingStore::new();
        store
            .insert(vecf("a", &[0.5, 1.5]).with_domain("cars"))
            .unwrap();
        store.insert(vecf("b", &[-1.0, 0.25])).unwrap();
        save_store(&path, &store).unwrap();
        let back = load_store(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.get("a"), store.get("a"));
        assert_eq!(back.tag("a"), Some("cars"));
    }

    fn random_store(n: usize, dim: usize, seed: u64) -> EmbeddingStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = EmbeddingStore::new();
        for i in 0..n {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.insert(vecf(&format!("v{i:04}"), &v)).unwrap();
        }
        store
    }

    #[test]
    fn top_k_matches_brute_force_on_large_random_pool() {
        let store = random_store(1000, 512, 11);
        let query = store.get("v0000").unwrap().clone();
        let mut brute: Vec<(String, f64)> = store
            .iter()
            .filter(|e| e.id != "v0000")
            .map(|e| (e.id.clone(), cosine_similarity(&query, e).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        brute.truncate(7);
        let hits = store.top_k_similar("v0000", 7, |_| true).unwrap();
        assert_eq!(hits, brute);
    }

    proptest! {
        #[test]
        fn cosine_symmetry_scale_and_bound(
            a in proptest::collection::vec(-10.0f32..10.0, 8),
            b in proptest::collection::vec(-10.0f32..10.0, 8),
            alpha in 0.01f32..50.0,
        ) {
            let va = vecf("a", &a);
            let vb = vecf("b", &b);
            prop_assume!(va.vector.iter().any(|v| *v != 0.0));
            prop_assume!(vb.vector.iter().any(|v| *v != 0.0));
            let ab = cosine_similarity(&va, &vb).unwrap();
            let ba = cosine_similarity(&vb, &va).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
            let scaled: Vec<f32> = a.iter().map(|v| v * alpha).collect();
            prop_assume!(scaled.iter().any(|v| *v != 0.0 && v.is_finite()));
            let vs = vecf("s", &scaled);
            let sb = cosine_similarity(&vs, &vb).unwrap();
            prop_assert!((sb - ab).abs() < 1e-5);
        }

        #[test]
        fn top_k_equals_brute_force(seed in 0u64..50, k in 1usize..12) {
            let store = random_store(40, 16, seed);
            let query = store.get("v0003").unwrap().clone();
            let mut brute: Vec<(String, f64)> = store
                .iter()
                .filter(|e| e.id != "v0003")
                .map(|e| (e.id.clone(), cosine_similarity(&query, e).unwrap()))
                .collect();
            brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
            brute.truncate(k);
            let hits = store.top_k_similar("v0003", k, |_| true).unwrap();
            prop_assert_eq!(hits, brute);
        }
    }
}
