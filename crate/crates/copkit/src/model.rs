//! Canonical domain types shared by every other module: procedures and their
//! steps, visual states, step-label parsing, and seeded permutations.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::{self, JsonlError};

/// Minimum step count for a procedure to be benchmark-eligible.
pub const MIN_BENCHMARK_STEPS: usize = 3;

/// The five canonical domain tags. Corpora may use their own.
pub const CANONICAL_DOMAINS: [&str; 5] = ["cars", "computers", "hobbies", "sports", "work"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("no line matches the step_<N> label grammar")]
    NoStepLabel,
    #[error("cannot produce a non-identity shuffle of {len} step(s)")]
    CannotShuffle { len: usize },
}

fn default_atomic() -> bool {
    true
}

fn atomic_is_true(atomic: &bool) -> bool {
    *atomic
}

/// One instruction step. `atomic` is false only for steps produced by fusing
/// consecutive atomic steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: u32,
    pub text: String,
    #[serde(default)]
    pub image_refs: Vec<String>,
    #[serde(default = "default_atomic", skip_serializing_if = "atomic_is_true")]
    pub atomic: bool,
}

impl Step {
    pub fn new(index: u32, text: impl Into<String>) -> Self {
        Self {
            index,
            text: text.into(),
            image_refs: Vec::new(),
            atomic: true,
        }
    }

    pub fn with_images(mut self, image_refs: Vec<String>) -> Self {
        self.image_refs = image_refs;
        self
    }
}

/// An ordered task workflow.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Procedure {
    pub id: String,
    pub domain: String,
    pub title: String,
    pub steps: Vec<Step>,
}

impl Procedure {
    pub fn new(
        id: impl Into<String>,
        domain: impl Into<String>,
        title: impl Into<String>,
        steps: Vec<Step>,
    ) -> Self {
        Self {
            id: id.into(),
            domain: domain.into(),
            title: title.into(),
            steps,
        }
    }

    /// Builds a procedure from bare step texts, indexing them 1..=L.
    pub fn from_texts(
        id: impl Into<String>,
        domain: impl Into<String>,
        title: impl Into<String>,
        texts: &[&str],
    ) -> Self {
        let steps = texts
            .iter()
            .enumerate()
            .map(|(i, text)| Step::new(i as u32 + 1, *text))
            .collect();
        Self::new(id, domain, title, steps)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// 1-based step lookup.
    pub fn step(&self, index: u32) -> Option<&Step> {
        if index == 0 {
            return None;
        }
        self.steps.get(index as usize - 1)
    }
}

/// A single image query: the state observed after completing `after_step`
/// of `source_procedure`. A next step must exist, so `after_step < L`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualState {
    pub image_id: String,
    pub source_procedure: String,
    pub after_step: u32,
}

/// A recorded bijection over step positions. `mapping[new_pos] = old_pos`
/// (0-based): the step shown at position `new_pos` originally sat at
/// `old_pos`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
    pub seed: u64,
}

impl Permutation {
    pub fn identity(len: usize, seed: u64) -> Self {
        Self {
            mapping: (0..len).collect(),
            seed,
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    /// Original 1-based step index shown at 1-based position `pos`.
    pub fn original_index(&self, pos: u32) -> Option<u32> {
        self.mapping
            .get(pos as usize - 1)
            .map(|&old| old as u32 + 1)
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0usize; self.mapping.len()];
        for (new_pos, &old_pos) in self.mapping.iter().enumerate() {
            inv[old_pos] = new_pos;
        }
        Permutation {
            mapping: inv,
            seed: self.seed,
        }
    }

    /// Reorders `steps` so that position i holds `steps[mapping[i]]`,
    /// renumbering indices to the new presentation order.
    pub fn apply(&self, steps: &[Step]) -> Vec<Step> {
        assert_eq!(steps.len(), self.mapping.len(), "permutation length");
        self.mapping
            .iter()
            .enumerate()
            .map(|(new_pos, &old_pos)| {
                let mut step = steps[old_pos].clone();
                step.index = new_pos as u32 + 1;
                step
            })
            .collect()
    }
}

/// Reorders a procedure's steps by a uniformly sampled seeded permutation.
/// With `force_nonidentity`, resamples until the mapping moves something.
pub fn permute(
    procedure: &Procedure,
    seed: u64,
    force_nonidentity: bool,
) -> Result<(Procedure, Permutation), ModelError> {
    let len = procedure.steps.len();
    if force_nonidentity && len < 2 {
        return Err(ModelError::CannotShuffle { len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping: Vec<usize> = (0..len).collect();
    loop {
        for i in (1..len).rev() {
            let j = rng.gen_range(0..=i);
            mapping.swap(i, j);
        }
        let identity = mapping.iter().enumerate().all(|(i, &m)| i == m);
        if !force_nonidentity || !identity {
            break;
        }
    }
    let permutation = Permutation { mapping, seed };
    let shuffled = Procedure {
        id: procedure.id.clone(),
        domain: procedure.domain.clone(),
        title: procedure.title.clone(),
        steps: permutation.apply(&procedure.steps),
    };
    Ok((shuffled, permutation))
}

/// Parses the LAST line of `text` matching the label grammar
/// `step_<digits> [:] <content>` (case-insensitive prefix, optional
/// whitespace around the optional colon). Content may be empty.
pub fn parse_step_label(text: &str) -> Result<(u32, String), ModelError> {
    text.lines()
        .rev()
        .find_map(parse_step_label_line)
        .ok_or(ModelError::NoStepLabel)
}

fn parse_step_label_line(line: &str) -> Option<(u32, String)> {
    let s = line.trim_start();
    // get() guards both short lines and non-ASCII char boundaries.
    if !s.get(..5)?.eq_ignore_ascii_case("step_") {
        return None;
    }
    let rest = &s[5..];
    let digits_end = rest
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(rest.len());
    if digits_end == 0 {
        return None;
    }
    let after = &rest[digits_end..];
    // Reject things like "step_2nd": digits must be followed by end of
    // line, whitespace, or a colon.
    if !(after.is_empty() || after.starts_with(':') || after.starts_with(char::is_whitespace)) {
        return None;
    }
    let index: u32 = rest[..digits_end].parse().ok()?;
    let mut tail = after.trim_start();
    if let Some(stripped) = tail.strip_prefix(':') {
        tail = stripped;
    }
    Some((index, tail.trim().to_string()))
}

/// Renders the canonical label line for a step index and content.
pub fn format_step_label(index: u32, content: &str) -> String {
    format!("step_{index}: {content}")
}

/// One structural problem found by [`validate_procedure`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    EmptyStepText {
        index: u32,
    },
    NonContiguousIndex {
        position: u32,
        expected: u32,
        found: u32,
    },
    TooFewSteps {
        len: usize,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks benchmark eligibility: non-empty step texts, contiguous 1..=L
/// indices, and at least [`MIN_BENCHMARK_STEPS`] steps.
pub fn validate_procedure(procedure: &Procedure) -> ValidationReport {
    let mut violations = Vec::new();
    if procedure.steps.len() < MIN_BENCHMARK_STEPS {
        violations.push(Violation::TooFewSteps {
            len: procedure.steps.len(),
        });
    }
    for (pos, step) in procedure.steps.iter().enumerate() {
        let expected = pos as u32 + 1;
        if step.index != expected {
            violations.push(Violation::NonContiguousIndex {
                position: expected,
                expected,
                found: step.index,
            });
        }
        if step.text.trim().is_empty() {
            violations.push(Violation::EmptyStepText { index: step.index });
        }
    }
    ValidationReport { violations }
}

/// Reads a corpus file: one procedure per line in the corpus JSONL schema.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Procedure>, JsonlError> {
    util::read_jsonl(path)
}

/// Writes a corpus file in the corpus JSONL schema.
pub fn write_corpus(path: impl AsRef<Path>, corpus: &[Procedure]) -> Result<(), JsonlError> {
    util::write_jsonl(path, corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(l: usize) -> Procedure {
        let texts: Vec<String> = (1..=l).map(|i| format!("do thing {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        Procedure::from_texts("p1", "cars", "Sample", &refs)
    }

    #[test]
    fn parse_simple_label() {
        assert_eq!(
            parse_step_label("step_3: Pour coolant").unwrap(),
            (3, "Pour coolant".to_string())
        );
    }

    #[test]
    fn parse_takes_last_matching_line() {
        let text = "I think...\nstep_2: Open hood\nstep_4: Close hood";
        assert_eq!(
            parse_step_label(text).unwrap(),
            (4, "Close hood".to_string())
        );
    }

    #[test]
    fn parse_rejects_unlabeled_text() {
        assert_eq!(
            parse_step_label("no label here").unwrap_err(),
            ModelError::NoStepLabel
        );
    }

    #[test]
    fn parse_tolerates_case_spacing_and_missing_colon() {
        assert_eq!(
            parse_step_label("Step_2 : open it").unwrap(),
            (2, "open it".to_string())
        );
        assert_eq!(
            parse_step_label("STEP_7:tighten").unwrap(),
            (7, "tighten".to_string())
        );
        assert_eq!(parse_step_label("step_5").unwrap(), (5, String::new()));
    }

    #[test]
    fn parse_rejects_joined_suffix() {
        assert_eq!(
            parse_step_label("step_2nd place").unwrap_err(),
            ModelError::NoStepLabel
        );
    }

    #[test]
    fn permute_single_step_without_force_is_identity() {
        let (shuffled, perm) = permute(&sample(1), 42, false).unwrap();
        assert!(perm.is_identity());
        assert_eq!(shuffled.steps[0].text, "do thing 1");
    }

    #[test]
    fn permute_is_deterministic() {
        let p = sample(6);
        let (a, pa) = permute(&p, 9, true).unwrap();
        let (b, pb) = permute(&p, 9, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
    }

    #[test]
    fn permute_force_errors_on_short_procedures() {
        assert_eq!(
            permute(&sample(1), 3, true).unwrap_err(),
            ModelError::CannotShuffle { len: 1 }
        );
    }

    #[test]
    fn forced_permutation_inverts_to_identity() {
        let p = sample(5);
        let (shuffled, perm) = permute(&p, 7, true).unwrap();
        assert!(!perm.is_identity());
        let restored = perm.inverse().apply(&shuffled.steps);
        let texts: Vec<&str> = restored.iter().map(|s| s.text.as_str()).collect();
        let original: Vec<&str> = p.steps.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, original);
    }

    #[test]
    fn validate_accepts_well_formed() {
        assert!(validate_procedure(&sample(4)).is_valid());
    }

    #[test]
    fn validate_flags_empty_text() {
        let mut p = sample(4);
        p.steps[1].text = String::new();
        let report = validate_procedure(&p);
        assert_eq!(
            report.violations,
            vec![Violation::EmptyStepText { index: 2 }]
        );
    }

    #[test]
    fn validate_flags_non_contiguous_indices() {
        let mut p = sample(3);
        p.steps[2].index = 4;
        let report = validate_procedure(&p);
        assert_eq!(
            report.violations,
            vec![Violation::NonContiguousIndex {
                position: 3,
                expected: 3,
                found: 4
            }]
        );
    }

    #[test]
    fn validate_flags_short_procedures() {
        let report = validate_procedure(&sample(2));
        assert_eq!(report.violations, vec![Violation::TooFewSteps { len: 2 }]);
    }

    #[test]
    fn corpus_jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = vec![sample(3), sample(5)];
        write_corpus(&path, &corpus).unwrap();
        let back = read_corpus(&path).unwrap();
        assert_eq!(back, corpus);
    }

    proptest! {
        #[test]
        fn label_roundtrip(index in 1u32..100_000, content in "[a-zA-Z0-9 ,'\\-]{0,60}") {
            let line = format_step_label(index, content.trim());
            let (i, c) = parse_step_label(&line).unwrap();
            prop_assert_eq!(i, index);
            prop_assert_eq!(c, content.trim());
        }

        #[test]
        fn permutation_preserves_step_multiset(len in 2usize..12, seed in 0u64..1000) {
            let p = sample(len);
            let (shuffled, perm) = permute(&p, seed, true).unwrap();
            let mut a: Vec<String> = p.steps.iter().map(|s| s.text.clone()).collect();
            let mut b: Vec<String> = shuffled.steps.iter().map(|s| s.text.clone()).collect();
            prop_assert_ne!(&a, &b, "forced shuffle must move something");
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            let restored = perm.inverse().apply(&shuffled.steps);
            let texts: Vec<String> = restored.iter().map(|s| s.text.clone()).collect();
            let original: Vec<String> = p.steps.iter().map(|s| s.text.clone()).collect();
            prop_assert_eq!(texts, original);
        }
    }
}
