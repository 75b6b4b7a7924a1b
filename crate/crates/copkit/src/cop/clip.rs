//! Retrieval-only pipeline variants backed by an embedding store: replace
//! phase 1 (candidate selection), phase 3 (current-step matching), or both
//! with cosine similarity over precomputed image and step-text embeddings.
//! The Full variant issues zero provider requests.

use serde::{Deserialize, Serialize};

use crate::embed::{cosine_similarity, EmbeddingStore, EmbeddingVector};
use crate::forge::{CandidateProcedure, Instance};
use crate::gateway::Provider;
use crate::model::Step;
use crate::templates::TemplateSet;
use crate::util::{normalize_text, sha256_hex};

use super::phases::{phase1_retrieve, phase2_decompose, phase3_predict, DecompositionMap};
use super::trace::TraceState;
use super::{finish_run, CopError, PipelineConfig, Prediction, RunResult, PROCEDURE_COMPLETE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipMode {
    /// Embedding-based retrieval, provider-driven phases 2 and 3.
    P1,
    /// Provider-driven phases 1 and 2, embedding-based current-step match.
    P3,
    /// Fully retrieval-based: zero provider requests, next step emitted
    /// verbatim from the matched procedure.
    Full,
}

impl ClipMode {
    pub fn label(&self) -> &'static str {
        match self {
            ClipMode::P1 => "clip:p1",
            ClipMode::P3 => "clip:p3",
            ClipMode::Full => "clip:full",
        }
    }
}

/// Store key for a step text: content-addressed so any candidate rendering
/// can be looked up regardless of provenance.
pub fn text_embedding_key(text: &str) -> String {
    let digest = sha256_hex(normalize_text(text).as_bytes());
    format!("text:{}", &digest[..16])
}

fn lookup<'a>(store: &'a EmbeddingStore, id: &str) -> Result<&'a EmbeddingVector, CopError> {
    store
        .get(id)
        .ok_or_else(|| CopError::MissingEmbedding { id: id.to_string() })
}

fn step_vector<'a>(
    store: &'a EmbeddingStore,
    step: &Step,
) -> Result<&'a EmbeddingVector, CopError> {
    lookup(store, &text_embedding_key(&step.text))
}

/// Best step cosine within one candidate.
fn candidate_score(
    image: &EmbeddingVector,
    candidate: &CandidateProcedure,
    store: &EmbeddingStore,
) -> Result<f64, CopError> {
    let mut best = f64::NEG_INFINITY;
    for step in &candidate.steps {
        let vector = step_vector(store, step)?;
        best = best.max(cosine_similarity(image, vector)?);
    }
    Ok(best)
}

/// Max-over-max retrieval: the candidate whose best step cosine against the
/// image is highest. Ties break toward the lowest candidate position.
pub fn clip_select(
    instance: &Instance,
    store: &EmbeddingStore,
) -> Result<(usize, Vec<f64>), CopError> {
    let image = lookup(store, &instance.image)?;
    let mut scores = Vec::with_capacity(instance.candidates.len());
    for candidate in &instance.candidates {
        scores.push(candidate_score(image, candidate, store)?);
    }
    let mut best = 0usize;
    for (i, score) in scores.iter().enumerate() {
        if *score > scores[best] {
            best = i;
        }
    }
    Ok((best, scores))
}

/// Current-step match: the 1-based step whose text embedding is closest to
/// the image. Ties break toward the lowest index.
fn clip_current(image_id: &str, steps: &[Step], store: &EmbeddingStore) -> Result<u32, CopError> {
    let image = lookup(store, image_id)?;
    let mut best = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for (i, step) in steps.iter().enumerate() {
        let score = cosine_similarity(image, step_vector(store, step)?)?;
        if score > best_score {
            best_score = score;
            best = i;
        }
    }
    Ok(best as u32 + 1)
}

fn local_successor(
    current: u32,
    working: &[Step],
    map: &DecompositionMap,
    original: &[Step],
) -> Prediction {
    let current_original = map.input_for(current);
    if current as usize == working.len() {
        Prediction {
            next_step_text: PROCEDURE_COMPLETE.to_string(),
            next_step_index: None,
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    } else if map.is_last_child(current) {
        let next_original = current_original + 1;
        Prediction {
            next_step_text: original[next_original as usize - 1].text.clone(),
            next_step_index: Some(next_original),
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    } else {
        Prediction {
            next_step_text: working[current as usize].text.clone(),
            next_step_index: Some(map.input_for(current + 1)),
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    }
}

/// Runs one instance through a retrieval-substituted pipeline variant.
/// `provider` may be `None` only in Full mode.
pub fn clip_variant(
    instance: &Instance,
    mode: ClipMode,
    store: &EmbeddingStore,
    provider: Option<&dyn Provider>,
    config: &PipelineConfig,
    templates: &TemplateSet,
) -> RunResult {
    let mut trace = TraceState::default();
    let outcome = run_clip(
        instance, mode, store, provider, config, templates, &mut trace,
    );
    finish_run(instance, mode.label(), config, trace, outcome)
}

fn run_clip(
    instance: &Instance,
    mode: ClipMode,
    store: &EmbeddingStore,
    provider: Option<&dyn Provider>,
    config: &PipelineConfig,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<Prediction, (String, CopError)> {
    let need_provider = || {
        provider.ok_or_else(|| {
            (
                "config".to_string(),
                CopError::InvalidPipeline(format!("{} requires a provider", mode.label())),
            )
        })
    };

    // Selection.
    let selected = match mode {
        ClipMode::P1 | ClipMode::Full => {
            let (index, scores) =
                clip_select(instance, store).map_err(|e| ("phase1".to_string(), e))?;
            trace.artifacts.phase1_scores = Some(scores);
            index
        }
        ClipMode::P3 => {
            let provider = need_provider()?;
            let (index, scores) = phase1_retrieve(
                &instance.image,
                &instance.candidates,
                provider,
                config.retrieval_mode,
                config.score_scale_max,
                templates,
                trace,
            )
            .map_err(|e| ("phase1".to_string(), e))?;
            trace.artifacts.phase1_scores = scores;
            index
        }
    };
    let candidate = &instance.candidates[selected];
    trace.artifacts.selected_candidate = Some(selected as u32);
    trace.artifacts.selected_procedure_id = Some(candidate.procedure_id.clone());

    // Decomposition (provider-backed modes only).
    let (working, map) = match mode {
        ClipMode::Full => (
            candidate.steps.clone(),
            DecompositionMap::identity(candidate.steps.len()),
        ),
        ClipMode::P1 | ClipMode::P3 => {
            let provider = need_provider()?;
            phase2_decompose(&candidate.steps, provider, templates, trace)
                .map_err(|e| ("phase2".to_string(), e))?
        }
    };

    // Current-step identification and local successor.
    let mut prediction = match mode {
        ClipMode::P3 | ClipMode::Full => {
            let current = clip_current(&instance.image, &working, store)
                .map_err(|e| ("phase3".to_string(), e))?;
            trace.artifacts.working_current_step = Some(current);
            local_successor(current, &working, &map, &candidate.steps)
        }
        ClipMode::P1 => {
            let provider = need_provider()?;
            phase3_predict(
                &instance.image,
                &working,
                &map,
                &candidate.steps,
                provider,
                templates,
                trace,
            )
            .map_err(|e| ("phase3".to_string(), e))?
        }
    };
    prediction.selected_procedure_id = Some(candidate.procedure_id.clone());
    Ok(prediction)
}
