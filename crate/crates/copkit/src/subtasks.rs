//! The five diagnostic sub-tasks generated from benchmark instances:
//! shuffled-order verification (SIV), current-step identification (CSI),
//! next-step prediction (NSP), disordered-procedure adaptation (DPA), and
//! cross-procedure matching (CPM). Every item's gold answer is derivable
//! from its provenance and seed alone — no model output is trusted.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cop::render_step_lines;
use crate::forge::Instance;
use crate::gateway::{run_batch, GatewayError, ModelRequest, Provider};
use crate::model::{parse_step_label, ModelError, Step};
use crate::templates::{self, TemplateSet};
use crate::util::{normalize_text, stable_seed};

#[derive(Debug, Error)]
pub enum SubTaskError {
    #[error("cannot shuffle a procedure with fewer than two steps")]
    CannotShuffle,
    #[error("instance has no negative candidate")]
    NoNegatives,
    #[error("items and responses differ in length: {items} vs {responses}")]
    LengthMismatch { items: usize, responses: usize },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

impl From<ModelError> for SubTaskError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::CannotShuffle { .. } => SubTaskError::CannotShuffle,
            ModelError::NoStepLabel => SubTaskError::CannotShuffle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubTaskKind {
    Siv,
    Csi,
    Nsp,
    Dpa,
    Cpm,
}

impl SubTaskKind {
    pub const ALL: [SubTaskKind; 5] = [
        SubTaskKind::Siv,
        SubTaskKind::Csi,
        SubTaskKind::Nsp,
        SubTaskKind::Dpa,
        SubTaskKind::Cpm,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            SubTaskKind::Siv => "SIV",
            SubTaskKind::Csi => "CSI",
            SubTaskKind::Nsp => "NSP",
            SubTaskKind::Dpa => "DPA",
            SubTaskKind::Cpm => "CPM",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "siv" => Some(SubTaskKind::Siv),
            "csi" => Some(SubTaskKind::Csi),
            "nsp" => Some(SubTaskKind::Nsp),
            "dpa" => Some(SubTaskKind::Dpa),
            "cpm" => Some(SubTaskKind::Cpm),
            _ => None,
        }
    }
}

/// The expected answer, by task shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Gold {
    /// SIV: whether the presented procedure was shuffled. The rendered
    /// prompt asks "has been shuffled", so a correct response token is
    /// `True` exactly when `shuffled` is true.
    Ordering { shuffled: bool },
    /// CPM: whether the image belongs to the presented procedure.
    Matches { matches: bool },
    /// CSI/NSP: a 1-based step index in the presented procedure.
    StepIndex { index: u32 },
    /// DPA: the next step's text from the original (unshuffled) sequence.
    StepText { text: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTaskItem {
    pub id: String,
    pub kind: SubTaskKind,
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    /// Step texts in presentation order (shuffled for SIV/DPA).
    pub presented_steps: Vec<String>,
    /// For shuffled presentations: 1-based original index shown at each
    /// presented position. Inverting it recovers the original order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<u32>>,
    pub gold: Gold,
    pub provenance: Provenance,
}

fn presented_index(instance: &Instance, original_index: u32) -> u32 {
    instance
        .positive_alignment()
        .fused_for(original_index)
        .unwrap_or(original_index)
}

fn render_single(template: &str, steps: &[Step], templates: &TemplateSet) -> String {
    templates
        .render(template, &[("STEPS", &render_step_lines(steps))])
        .expect("builtin template")
}

/// SIV: with seeded probability 0.5 the positive procedure is presented
/// shuffled (forced non-identity), otherwise in order.
pub fn make_siv(
    instance: &Instance,
    seed: u64,
    templates: &TemplateSet,
) -> Result<SubTaskItem, SubTaskError> {
    let positive = instance.positive();
    let procedure = crate::model::Procedure::new(
        positive.procedure_id.clone(),
        instance.meta.domain.clone(),
        String::new(),
        positive.steps.clone(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shuffled = rng.gen_bool(0.5);
    let (steps, permutation) = if shuffled {
        let (shuffled_proc, perm) =
            crate::model::permute(&procedure, stable_seed(seed, &["perm"]), true)?;
        let mapping: Vec<u32> = (1..=perm.len() as u32)
            .map(|pos| perm.original_index(pos).expect("in range"))
            .collect();
        (shuffled_proc.steps, Some(mapping))
    } else {
        (procedure.steps.clone(), None)
    };
    Ok(SubTaskItem {
        id: format!("siv-{}", instance.id),
        kind: SubTaskKind::Siv,
        prompt: render_single(templates::SUBTASK_SIV, &steps, templates),
        image_id: None,
        presented_steps: steps.iter().map(|s| s.text.clone()).collect(),
        permutation,
        gold: Gold::Ordering { shuffled },
        provenance: Provenance {
            source_id: instance.id.clone(),
            seed,
        },
    })
}

/// CSI: identify the presented step matching the image.
pub fn make_csi(instance: &Instance, templates: &TemplateSet) -> SubTaskItem {
    let positive = instance.positive();
    SubTaskItem {
        id: format!("csi-{}", instance.id),
        kind: SubTaskKind::Csi,
        prompt: render_single(templates::SUBTASK_CSI, &positive.steps, templates),
        image_id: Some(instance.image.clone()),
        presented_steps: positive.steps.iter().map(|s| s.text.clone()).collect(),
        permutation: None,
        gold: Gold::StepIndex {
            index: presented_index(instance, instance.after_step),
        },
        provenance: Provenance {
            source_id: instance.id.clone(),
            seed: 0,
        },
    }
}

/// NSP: identify the presented step after the one shown in the image.
pub fn make_nsp(instance: &Instance, templates: &TemplateSet) -> SubTaskItem {
    let positive = instance.positive();
    SubTaskItem {
        id: format!("nsp-{}", instance.id),
        kind: SubTaskKind::Nsp,
        prompt: render_single(templates::SUBTASK_NSP, &positive.steps, templates),
        image_id: Some(instance.image.clone()),
        presented_steps: positive.steps.iter().map(|s| s.text.clone()).collect(),
        permutation: None,
        gold: Gold::StepIndex {
            index: presented_index(instance, instance.after_step + 1),
        },
        provenance: Provenance {
            source_id: instance.id.clone(),
            seed: 0,
        },
    }
}

/// DPA: the positive procedure is presented shuffled (forced non-identity);
/// the gold answer stays the ORIGINAL-sequence next step.
pub fn make_dpa(
    instance: &Instance,
    seed: u64,
    templates: &TemplateSet,
) -> Result<SubTaskItem, SubTaskError> {
    let positive = instance.positive();
    let procedure = crate::model::Procedure::new(
        positive.procedure_id.clone(),
        instance.meta.domain.clone(),
        String::new(),
        positive.steps.clone(),
    );
    let (shuffled_proc, perm) =
        crate::model::permute(&procedure, stable_seed(seed, &["perm"]), true)?;
    let mapping: Vec<u32> = (1..=perm.len() as u32)
        .map(|pos| perm.original_index(pos).expect("in range"))
        .collect();
    Ok(SubTaskItem {
        id: format!("dpa-{}", instance.id),
        kind: SubTaskKind::Dpa,
        prompt: render_single(templates::SUBTASK_DPA, &shuffled_proc.steps, templates),
        image_id: Some(instance.image.clone()),
        presented_steps: shuffled_proc.steps.iter().map(|s| s.text.clone()).collect(),
        permutation: Some(mapping),
        gold: Gold::StepText {
            text: instance.gold_next_step.clone(),
        },
        provenance: Provenance {
            source_id: instance.id.clone(),
            seed,
        },
    })
}

/// CPM: with seeded probability 0.5 the image is paired with its own
/// procedure (gold: matches), otherwise with a sampled negative candidate.
pub fn make_cpm(
    instance: &Instance,
    seed: u64,
    templates: &TemplateSet,
) -> Result<SubTaskItem, SubTaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matches = rng.gen_bool(0.5);
    let candidate = if matches {
        instance.positive()
    } else {
        let negatives: Vec<usize> = (0..instance.candidates.len())
            .filter(|&i| i as u32 != instance.label)
            .collect();
        if negatives.is_empty() {
            return Err(SubTaskError::NoNegatives);
        }
        let pick = negatives[rng.gen_range(0..negatives.len())];
        &instance.candidates[pick]
    };
    Ok(SubTaskItem {
        id: format!("cpm-{}", instance.id),
        kind: SubTaskKind::Cpm,
        prompt: render_single(templates::SUBTASK_CPM, &candidate.steps, templates),
        image_id: Some(instance.image.clone()),
        presented_steps: candidate.steps.iter().map(|s| s.text.clone()).collect(),
        permutation: None,
        gold: Gold::Matches { matches },
        provenance: Provenance {
            source_id: instance.id.clone(),
            seed,
        },
    })
}

/// Generates the requested kinds for every instance, with per-item seeds
/// derived from (seed, kind, instance id). Instances that cannot host a
/// kind (too short to shuffle, no negatives) are skipped with a warning.
pub fn generate_items(
    instances: &[Instance],
    kinds: &[SubTaskKind],
    seed: u64,
    templates: &TemplateSet,
) -> (Vec<SubTaskItem>, Vec<String>) {
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for instance in instances {
        for kind in kinds {
            let item_seed = stable_seed(seed, &[kind.label(), &instance.id]);
            let made = match kind {
                SubTaskKind::Siv => make_siv(instance, item_seed, templates),
                SubTaskKind::Csi => Ok(make_csi(instance, templates)),
                SubTaskKind::Nsp => Ok(make_nsp(instance, templates)),
                SubTaskKind::Dpa => make_dpa(instance, item_seed, templates),
                SubTaskKind::Cpm => make_cpm(instance, item_seed, templates),
            };
            match made {
                Ok(item) => items.push(item),
                Err(err) => warnings.push(format!(
                    "{} skipped for {}: {err}",
                    kind.label(),
                    instance.id
                )),
            }
        }
    }
    (items, warnings)
}

/// One provider response for an item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponse {
    pub item_id: String,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Runs a provider over items (concurrently up to `workers`), one request
/// per item. Provider errors surface as empty responses with a warning tag
/// so scoring denominators stay stable.
pub fn run_items(
    items: &[SubTaskItem],
    provider: &dyn Provider,
    workers: usize,
) -> Vec<ItemResponse> {
    run_batch(items, workers, |_, item| {
        let mut request = ModelRequest::text(&item.prompt);
        if let Some(image) = &item.image_id {
            request = request.with_image(image.clone());
        }
        match provider.complete(&request) {
            Ok(response) => ItemResponse {
                item_id: item.id.clone(),
                response: response.text,
                input_tokens: response.usage.input_tokens,
                output_tokens: response.usage.output_tokens,
            },
            Err(err) => ItemResponse {
                item_id: item.id.clone(),
                response: format!("<provider error: {}>", err.class()),
                input_tokens: 0,
                output_tokens: 0,
            },
        }
    })
}

fn parse_bool(response: &str) -> Option<bool> {
    match normalize_text(response).as_str() {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

/// Whether a response is correct for an item. `None` means unparseable.
fn judge(item: &SubTaskItem, response: &str) -> Option<bool> {
    match &item.gold {
        Gold::Ordering { shuffled } => parse_bool(response).map(|answered| answered == *shuffled),
        Gold::Matches { matches } => parse_bool(response).map(|answered| answered == *matches),
        Gold::StepIndex { index } => parse_step_label(response)
            .ok()
            .map(|(parsed, _)| parsed == *index),
        Gold::StepText { text } => {
            let (index, content) = parse_step_label(response).ok()?;
            let answered = if content.is_empty() {
                item.presented_steps.get(index as usize - 1)?.clone()
            } else {
                content
            };
            Some(normalize_text(&answered) == normalize_text(text))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KindScore {
    pub total: usize,
    pub correct: usize,
    pub unparseable: usize,
    pub accuracy_percent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubTaskScoreTable {
    pub per_kind: BTreeMap<SubTaskKind, KindScore>,
}

impl SubTaskScoreTable {
    pub fn to_text(&self) -> String {
        let mut rows = vec![vec![
            "kind".to_string(),
            "total".to_string(),
            "correct".to_string(),
            "unparseable".to_string(),
            "accuracy_percent".to_string(),
        ]];
        for (kind, score) in &self.per_kind {
            rows.push(vec![
                kind.label().to_string(),
                score.total.to_string(),
                score.correct.to_string(),
                score.unparseable.to_string(),
                format!("{:.2}", score.accuracy_percent),
            ]);
        }
        crate::util::render_aligned_table(&rows)
    }
}

/// Scores responses positionally aligned with items. Boolean kinds use
/// normalized True/False token matching, index kinds lenient `step_X`
/// parsing, DPA normalized text matching (bare `step_X` answers resolve
/// through the shuffled presentation). Unparseable responses count as
/// incorrect, never dropped.
pub fn score_subtasks(
    items: &[SubTaskItem],
    responses: &[String],
) -> Result<SubTaskScoreTable, SubTaskError> {
    if items.len() != responses.len() {
        return Err(SubTaskError::LengthMismatch {
            items: items.len(),
            responses: responses.len(),
        });
    }
    let mut table = SubTaskScoreTable::default();
    for (item, response) in items.iter().zip(responses) {
        let entry = table.per_kind.entry(item.kind).or_default();
        entry.total += 1;
        match judge(item, response) {
            Some(true) => entry.correct += 1,
            Some(false) => {}
            None => entry.unparseable += 1,
        }
    }
    for score in table.per_kind.values_mut() {
        score.accuracy_percent = if score.total > 0 {
            100.0 * score.correct as f64 / score.total as f64
        } else {
            0.0
        };
    }
    Ok(table)
}

/// Scripted rules answering every item correctly (for offline testing).
/// Rules key on the exact prompt AND the item's image: prompts repeat
/// across items built from the same procedure, the image disambiguates.
pub fn oracle_rules(items: &[SubTaskItem]) -> Vec<crate::gateway::Rule> {
    items
        .iter()
        .map(|item| {
            let answer = match &item.gold {
                Gold::Ordering { shuffled } => if *shuffled { "True" } else { "False" }.to_string(),
                Gold::Matches { matches } => if *matches { "True" } else { "False" }.to_string(),
                Gold::StepIndex { index } => format!("step_{index}"),
                Gold::StepText { text } => {
                    let position = item
                        .presented_steps
                        .iter()
                        .position(|presented| normalize_text(presented) == normalize_text(text))
                        .map(|i| i as u32 + 1)
                        .unwrap_or(1);
                    format!("step_{position}: {text}")
                }
            };
            let mut rule = crate::gateway::Rule::new(answer).when_equals(item.prompt.clone());
            if let Some(image) = &item.image_id {
                rule = rule.when_image(image.clone());
            }
            rule
        })
        .collect()
}
