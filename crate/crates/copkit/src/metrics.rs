//! Scoring and aggregation: exact accuracy, token-overlap and
//! embedding-based similarity, multi-judge panel scoring, human-evaluation
//! tallies with Fleiss kappa, and grouped breakdown reports.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cop::{RunResult, PROCEDURE_COMPLETE};
use crate::embed::{cosine_similarity, EmbeddingStore};
use crate::forge::Instance;
use crate::gateway::{ModelRequest, Provider};
use crate::templates::{self, TemplateSet};
use crate::util::{normalize_text, render_aligned_table, trailing_integer};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("no embedding for token {0:?}")]
    MissingEmbedding(String),
    #[error("every judge failed to produce a score")]
    AllJudgesFailed,
    #[error("chance agreement is 1 but observed agreement is not; kappa undefined")]
    DegenerateAgreement,
    #[error("annotation matrix invalid: {0}")]
    InvalidMatrix(String),
    #[error("no grouping metadata found for result {0:?}")]
    UnknownGroupKey(String),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

/// 100 x matches / total. An empty input is defined as 0.0 (with a log
/// warning) so report pipelines stay total.
pub fn exact_accuracy(predictions: &[u32], labels: &[u32]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        log::warn!("exact_accuracy over an empty input is defined as 0.0");
        return Ok(0.0);
    }
    let matches = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * matches as f64 / predictions.len() as f64)
}

/// Similarity scorer backends.
#[derive(Clone, Copy)]
pub enum SimilarityMode<'a> {
    /// Deterministic lowercase token-overlap F1 (multiset intersection).
    TokenOverlap,
    /// Greedy token-level max-cosine matching in both directions over a
    /// token-embedding store (entries keyed by lowercased token), combined
    /// as harmonic-mean F1.
    Embedding(&'a EmbeddingStore),
}

fn tokens_of(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.to_lowercase()
                .trim_matches(|c: char| c.is_ascii_punctuation())
                .to_string()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn overlap_f1(prediction: &[String], reference: &[String]) -> f64 {
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for token in reference {
        *counts.entry(token).or_insert(0) += 1;
    }
    let mut matched = 0i64;
    for token in prediction {
        let slot = counts.entry(token).or_insert(0);
        if *slot > 0 {
            *slot -= 1;
            matched += 1;
        }
    }
    if prediction.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let precision = matched as f64 / prediction.len() as f64;
    let recall = matched as f64 / reference.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn greedy_embedding_f1(
    prediction: &[String],
    reference: &[String],
    store: &EmbeddingStore,
) -> Result<f64, MetricsError> {
    let lookup = |token: &String| {
        store
            .get(token)
            .ok_or_else(|| MetricsError::MissingEmbedding(token.clone()))
    };
    let pred_vecs = prediction
        .iter()
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;
    let ref_vecs = reference
        .iter()
        .map(lookup)
        .collect::<Result<Vec<_>, _>>()?;
    let best_against = |xs: &[&crate::embed::EmbeddingVector],
                        ys: &[&crate::embed::EmbeddingVector]|
     -> Result<f64, MetricsError> {
        let mut total = 0.0;
        for x in xs {
            let mut best = f64::NEG_INFINITY;
            for y in ys {
                best = best.max(cosine_similarity(x, y)?);
            }
            total += best;
        }
        Ok(total / xs.len() as f64)
    };
    let precision = best_against(&pred_vecs, &ref_vecs)?;
    let recall = best_against(&ref_vecs, &pred_vecs)?;
    if precision + recall <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * precision * recall / (precision + recall)).clamp(0.0, 1.0))
}

/// Similarity in [0, 1] between a predicted and a reference step text.
pub fn similarity_score(
    prediction: &str,
    reference: &str,
    mode: SimilarityMode,
) -> Result<f64, MetricsError> {
    if prediction.trim().is_empty() {
        return Err(MetricsError::EmptyInput("prediction"));
    }
    if reference.trim().is_empty() {
        return Err(MetricsError::EmptyInput("reference"));
    }
    let pred_tokens = tokens_of(prediction);
    let ref_tokens = tokens_of(reference);
    if pred_tokens.is_empty() || ref_tokens.is_empty() {
        return Ok(0.0);
    }
    match mode {
        SimilarityMode::TokenOverlap => Ok(overlap_f1(&pred_tokens, &ref_tokens)),
        SimilarityMode::Embedding(store) => greedy_embedding_f1(&pred_tokens, &ref_tokens, store),
    }
}

/// An ordered panel of judge providers sharing one rubric.
pub struct JudgePanel {
    pub judges: Vec<Arc<dyn Provider>>,
    pub rubric_template: String,
    pub scale_max: u32,
}

impl JudgePanel {
    pub fn new(judges: Vec<Arc<dyn Provider>>) -> Self {
        Self {
            judges,
            rubric_template: TemplateSet::builtin()
                .get(templates::JUDGE_RUBRIC)
                .expect("builtin rubric")
                .to_string(),
            scale_max: 10,
        }
    }

    pub fn with_rubric(mut self, rubric_template: impl Into<String>) -> Self {
        self.rubric_template = rubric_template.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmScore {
    /// Mean judge score normalized to 0..=100.
    pub score_percent: f64,
    /// (judge id, raw 0..=scale score) for every judge that answered.
    pub per_judge: Vec<(String, u32)>,
    /// Judges excluded after an unparseable answer and one retry.
    pub excluded: Vec<String>,
}

fn parse_judge_score(text: &str, scale_max: u32) -> Option<u32> {
    let value = trailing_integer(text)?;
    if value >= 0 && value <= scale_max as i64 {
        Some(value as u32)
    } else {
        None
    }
}

/// Scores a prediction against a reference with every judge independently:
/// the rubric is rendered with the reference and prediction, each judge's
/// bare-integer answer is parsed (trailing-integer extraction), a failed
/// parse is retried once and then the judge is excluded with a warning.
pub fn llm_score(
    prediction: &str,
    reference: &str,
    panel: &JudgePanel,
) -> Result<LlmScore, MetricsError> {
    if panel.judges.is_empty() {
        return Err(MetricsError::EmptyInput("judges"));
    }
    let instruction = panel
        .rubric_template
        .replace("{LABEL}", reference)
        .replace("{PREDICT}", prediction);
    let request = ModelRequest::text(&instruction);
    let mut per_judge = Vec::new();
    let mut excluded = Vec::new();
    for judge in &panel.judges {
        let mut parsed = None;
        for _attempt in 0..2 {
            match judge.complete(&request) {
                Ok(response) => {
                    if let Some(score) = parse_judge_score(&response.text, panel.scale_max) {
                        parsed = Some(score);
                        break;
                    }
                }
                Err(err) => {
                    log::warn!("judge {} errored: {err}", judge.id());
                }
            }
        }
        match parsed {
            Some(score) => per_judge.push((judge.id().to_string(), score)),
            None => {
                log::warn!("judge {} excluded after retry", judge.id());
                excluded.push(judge.id().to_string());
            }
        }
    }
    if per_judge.is_empty() {
        return Err(MetricsError::AllJudgesFailed);
    }
    let mean = per_judge.iter().map(|(_, s)| *s as f64).sum::<f64>() / per_judge.len() as f64;
    Ok(LlmScore {
        score_percent: mean / panel.scale_max as f64 * 100.0,
        per_judge,
        excluded,
    })
}

/// Items x categories counts with a fixed number of annotators per item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    counts: Vec<Vec<u64>>,
    annotators: u64,
}

impl AnnotationMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        if counts.len() < 2 {
            return Err(MetricsError::InvalidMatrix(
                "need at least two items".into(),
            ));
        }
        let categories = counts[0].len();
        if categories < 2 {
            return Err(MetricsError::InvalidMatrix(
                "need at least two categories".into(),
            ));
        }
        let annotators: u64 = counts[0].iter().sum();
        if annotators < 2 {
            return Err(MetricsError::InvalidMatrix(
                "need at least two annotators per item".into(),
            ));
        }
        for (i, row) in counts.iter().enumerate() {
            if row.len() != categories {
                return Err(MetricsError::InvalidMatrix(format!(
                    "row {i} has {} categories, expected {categories}",
                    row.len()
                )));
            }
            let sum: u64 = row.iter().sum();
            if sum != annotators {
                return Err(MetricsError::InvalidMatrix(format!(
                    "row {i} sums to {sum}, expected {annotators}"
                )));
            }
        }
        Ok(Self { counts, annotators })
    }

    pub fn items(&self) -> usize {
        self.counts.len()
    }

    pub fn annotators(&self) -> u64 {
        self.annotators
    }
}

/// Fleiss kappa: (P̄ - P̄e) / (1 - P̄e). When all mass sits in one category
/// (P̄e = 1), returns 1.0 if observed agreement is also perfect, otherwise
/// the degenerate-agreement error.
pub fn fleiss_kappa(matrix: &AnnotationMatrix) -> Result<f64, MetricsError> {
    let n = matrix.annotators as f64;
    let items = matrix.counts.len() as f64;
    let categories = matrix.counts[0].len();

    let p_bar = matrix
        .counts
        .iter()
        .map(|row| {
            let sq: f64 = row.iter().map(|&c| (c * c) as f64).sum();
            (sq - n) / (n * (n - 1.0))
        })
        .sum::<f64>()
        / items;

    let mut p_e = 0.0;
    for j in 0..categories {
        let col: f64 = matrix.counts.iter().map(|row| row[j] as f64).sum();
        let p_j = col / (items * n);
        p_e += p_j * p_j;
    }

    if (1.0 - p_e).abs() < 1e-12 {
        if (p_bar - 1.0).abs() < 1e-12 {
            return Ok(1.0);
        }
        return Err(MetricsError::DegenerateAgreement);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairwiseJudgment {
    Better,
    Equivalent,
    Worse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub win_percent: f64,
    pub equal_percent: f64,
    pub loss_percent: f64,
    pub total: usize,
}

/// Win/equal/loss percentages over pairwise judgments.
pub fn pairwise_tally(judgments: &[PairwiseJudgment]) -> Result<Tally, MetricsError> {
    if judgments.is_empty() {
        return Err(MetricsError::EmptyInput("judgments"));
    }
    let total = judgments.len() as f64;
    let count = |needle: PairwiseJudgment| {
        judgments.iter().filter(|j| **j == needle).count() as f64 / total * 100.0
    };
    Ok(Tally {
        win_percent: count(PairwiseJudgment::Better),
        equal_percent: count(PairwiseJudgment::Equivalent),
        loss_percent: count(PairwiseJudgment::Worse),
        total: judgments.len(),
    })
}

/// Step-length buckets partitioning all benchmark-eligible lengths (>= 3).
/// `uppers` holds the inclusive upper bound of every bucket but the last,
/// which is open-ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBuckets {
    pub uppers: Vec<u32>,
}

impl Default for StepBuckets {
    fn default() -> Self {
        Self { uppers: vec![5, 9] }
    }
}

impl StepBuckets {
    pub fn label_for(&self, length: u32) -> String {
        let mut lo = crate::model::MIN_BENCHMARK_STEPS as u32;
        for &hi in &self.uppers {
            if length <= hi {
                return format!("{lo}-{hi}");
            }
            lo = hi + 1;
        }
        format!("{lo}+")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    Domain,
    StepLengthBucket,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownMetric {
    /// Percent of results whose predicted next-step text matches gold
    /// (normalized comparison).
    NextStepAccuracy,
    /// Percent of results whose selected candidate equals the label.
    RetrievalAccuracy,
    /// Mean token-overlap F1 against gold, scaled to 0..=100.
    SimilarityF1,
}

/// Whether a prediction's text matches the instance gold (normalized).
pub fn next_step_matches(result: &RunResult, instance: &Instance) -> bool {
    match &result.prediction {
        Some(prediction) => {
            prediction.next_step_text != PROCEDURE_COMPLETE
                && normalize_text(&prediction.next_step_text)
                    == normalize_text(&instance.gold_next_step)
        }
        None => false,
    }
}

fn metric_value(
    metric: BreakdownMetric,
    result: &RunResult,
    instance: &Instance,
) -> Result<f64, MetricsError> {
    Ok(match metric {
        BreakdownMetric::NextStepAccuracy => {
            if next_step_matches(result, instance) {
                100.0
            } else {
                0.0
            }
        }
        BreakdownMetric::RetrievalAccuracy => {
            let selected = result.trace.artifacts.selected_candidate.or_else(|| {
                result.prediction.as_ref().and_then(|p| {
                    p.selected_procedure_id.as_ref().and_then(|id| {
                        instance
                            .candidates
                            .iter()
                            .position(|c| &c.procedure_id == id)
                            .map(|i| i as u32)
                    })
                })
            });
            match selected {
                Some(index) if index == instance.label => 100.0,
                _ => 0.0,
            }
        }
        BreakdownMetric::SimilarityF1 => match &result.prediction {
            Some(prediction) if prediction.next_step_text != PROCEDURE_COMPLETE => {
                similarity_score(
                    &prediction.next_step_text,
                    &instance.gold_next_step,
                    SimilarityMode::TokenOverlap,
                )? * 100.0
            }
            _ => 0.0,
        },
    })
}

/// Grouping key for an instance under a breakdown axis.
pub fn group_key(instance: &Instance, group_by: GroupBy, buckets: &StepBuckets) -> String {
    match group_by {
        GroupBy::Domain => instance.meta.domain.clone(),
        GroupBy::StepLengthBucket => buckets.label_for(instance.meta.positive_len),
        GroupBy::None => "all".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub key: String,
    pub count: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreakdownTable {
    pub metric: BreakdownMetric,
    pub group_by: GroupBy,
    pub groups: Vec<GroupRow>,
    /// Sample-weighted mean of the group values (exact).
    pub overall: f64,
    pub total: usize,
}

impl BreakdownTable {
    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![
            "group".to_string(),
            "count".to_string(),
            "value".to_string(),
        ]];
        for group in &self.groups {
            rows.push(vec![
                group.key.clone(),
                group.count.to_string(),
                format!("{:.2}", group.value),
            ]);
        }
        rows.push(vec![
            "overall".to_string(),
            self.total.to_string(),
            format!("{:.2}", self.overall),
        ]);
        render_aligned_table(&rows)
    }
}

/// Computes `metric` per group plus the overall row. Results join to
/// instances by id; a result without a matching instance is an error.
pub fn breakdown_report(
    results: &[RunResult],
    gold: &[Instance],
    group_by: GroupBy,
    metric: BreakdownMetric,
    buckets: &StepBuckets,
) -> Result<BreakdownTable, MetricsError> {
    let by_id: BTreeMap<&str, &Instance> = gold.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for result in results {
        let instance = by_id
            .get(result.instance_id.as_str())
            .ok_or_else(|| MetricsError::UnknownGroupKey(result.instance_id.clone()))?;
        let key = group_key(instance, group_by, buckets);
        grouped
            .entry(key)
            .or_default()
            .push(metric_value(metric, result, instance)?);
    }
    let groups: Vec<GroupRow> = grouped
        .into_iter()
        .map(|(key, values)| GroupRow {
            count: values.len(),
            value: values.iter().sum::<f64>() / values.len() as f64,
            key,
        })
        .collect();
    let total: usize = groups.iter().map(|g| g.count).sum();
    let overall = if total > 0 {
        groups.iter().map(|g| g.value * g.count as f64).sum::<f64>() / total as f64
    } else {
        0.0
    };
    Ok(BreakdownTable {
        metric,
        group_by,
        groups,
        overall,
        total,
    })
}
