//! The staged next-step prediction engine: phase 1 retrieves the manual
//! matching the image, phase 2 splits combined steps, phase 3 identifies the
//! current step and resolves the next step locally. Also hosts the direct
//! baseline, phase-subset ablations, retrieval-only variants, and the
//! scripted oracle builder used for offline pipeline testing.

mod clip;
mod oracle;
mod phases;
mod render;
mod trace;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clip::{clip_select, clip_variant, text_embedding_key, ClipMode};
pub use oracle::oracle_rules;
pub use phases::{phase1_retrieve, phase2_decompose, phase3_predict, DecompositionMap};
pub use render::{parse_selection, render_candidate_block, render_candidates, render_step_lines};
pub use trace::{PhaseTrace, TraceArtifacts, TraceRecord, TraceState};

use crate::embed::EmbeddingStore;
use crate::forge::Instance;
use crate::gateway::{run_batch, GatewayError, Provider, TokenLedger};
use crate::model::parse_step_label;
use crate::templates::{self, TemplateSet};
use crate::util::sha256_hex;

/// Sentinel prediction when the identified current step is the last one.
pub const PROCEDURE_COMPLETE: &str = "__PROCEDURE_COMPLETE__";

#[derive(Debug, Error)]
pub enum CopError {
    #[error("retrieval selection unparseable: {response:?}")]
    UnparseableSelection { response: String },
    #[error("current-step response unparseable: {response:?}")]
    UnparseableCurrentStep { response: String },
    #[error("step index {index} out of range for {len} step(s)")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("no step label in response: {response:?}")]
    NoStepLabel { response: String },
    #[error("no embedding for id {id:?}")]
    MissingEmbedding { id: String },
    #[error("instance has no candidates")]
    EmptyCandidates,
    #[error("invalid pipeline configuration: {0}")]
    InvalidPipeline(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Embed(#[from] crate::embed::EmbedError),
}

impl CopError {
    pub fn class(&self) -> &'static str {
        match self {
            CopError::UnparseableSelection { .. } => "unparseable_selection",
            CopError::UnparseableCurrentStep { .. } => "unparseable_current_step",
            CopError::IndexOutOfRange { .. } => "index_out_of_range",
            CopError::NoStepLabel { .. } => "no_step_label",
            CopError::MissingEmbedding { .. } => "missing_embedding",
            CopError::EmptyCandidates => "empty_candidates",
            CopError::InvalidPipeline(_) => "invalid_pipeline",
            CopError::Gateway(err) => err.class(),
            CopError::Embed(_) => "embedding",
        }
    }
}

/// Which phases run. Phase 1 is always required: later phases consume its
/// selected procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSet {
    pub phase2: bool,
    pub phase3: bool,
}

impl PhaseSet {
    pub fn full() -> Self {
        Self {
            phase2: true,
            phase3: true,
        }
    }

    pub fn retrieval_only() -> Self {
        Self {
            phase2: false,
            phase3: false,
        }
    }

    /// Parses compact ablation notation: "1", "12", "13", "123".
    pub fn parse(text: &str) -> Result<Self, CopError> {
        let mut set = Self {
            phase2: false,
            phase3: false,
        };
        if !text.contains('1') {
            return Err(CopError::InvalidPipeline(format!(
                "phase set {text:?} must include phase 1"
            )));
        }
        for c in text.chars() {
            match c {
                '1' => {}
                '2' => set.phase2 = true,
                '3' => set.phase3 = true,
                other => {
                    return Err(CopError::InvalidPipeline(format!(
                        "unknown phase {other:?} in {text:?}"
                    )))
                }
            }
        }
        Ok(set)
    }

    pub fn label(&self) -> String {
        let mut label = String::from("1");
        if self.phase2 {
            label.push('2');
        }
        if self.phase3 {
            label.push('3');
        }
        label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    SingleShot,
    PerCandidateScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub phases: PhaseSet,
    pub retrieval_mode: RetrievalMode,
    pub score_scale_max: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            phases: PhaseSet::full(),
            retrieval_mode: RetrievalMode::SingleShot,
            score_scale_max: 10,
        }
    }
}

impl PipelineConfig {
    pub fn with_phases(mut self, phases: PhaseSet) -> Self {
        self.phases = phases;
        self
    }

    /// Stable short hash identifying this configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&bytes)[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub next_step_text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub next_step_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub current_step_index: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_procedure_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunError {
    pub phase: String,
    pub class: String,
    pub message: String,
}

/// Per-instance outcome: prediction (or error with phase attribution), the
/// full execution trace, and the token ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub instance_id: String,
    pub mode: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
    pub tokens: TokenLedger,
    pub trace: PhaseTrace,
}

pub(crate) fn finish_run(
    instance: &Instance,
    mode: &str,
    config: &PipelineConfig,
    trace: TraceState,
    outcome: Result<Prediction, (String, CopError)>,
) -> RunResult {
    let (trace, tokens) = trace.freeze();
    let (prediction, error) = match outcome {
        Ok(prediction) => (Some(prediction), None),
        Err((phase, err)) => (
            None,
            Some(RunError {
                phase,
                class: err.class().to_string(),
                message: err.to_string(),
            }),
        ),
    };
    RunResult {
        instance_id: instance.id.clone(),
        mode: mode.to_string(),
        config_hash: config.hash(),
        prediction,
        error,
        tokens,
        trace,
    }
}

const DIRECT: &str = "direct";
const BASELINE: &str = "baseline";

/// Direct next-step prompt over a single (possibly decomposed) manual,
/// used by phase subsets without phase 3.
fn direct_predict(
    image_id: &str,
    candidate: &crate::forge::CandidateProcedure,
    provider: &dyn Provider,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<Prediction, CopError> {
    let block = render_candidate_block(0, candidate);
    let instruction = templates
        .render(templates::BASELINE, &[("STEPS", block.as_str())])
        .expect("builtin template");
    let response = trace.issue(provider, DIRECT, &instruction, &[image_id])?;
    parse_next_step_response(&response, Some(&candidate.steps))
}

/// Parses a `step_X: [content]` next-step answer. Bare `step_X` answers
/// resolve content from the presented steps when available.
fn parse_next_step_response(
    response: &str,
    presented: Option<&[crate::model::Step]>,
) -> Result<Prediction, CopError> {
    let (index, content) = parse_step_label(response).map_err(|_| CopError::NoStepLabel {
        response: response.to_string(),
    })?;
    let text = if content.is_empty() {
        match presented.and_then(|steps| steps.get(index as usize - 1)) {
            Some(step) => step.text.clone(),
            None => {
                return Err(CopError::NoStepLabel {
                    response: response.to_string(),
                })
            }
        }
    } else {
        content
    };
    Ok(Prediction {
        next_step_text: text,
        next_step_index: Some(index),
        current_step_index: None,
        selected_procedure_id: None,
    })
}

/// Runs the configured phase subset over one instance.
///
/// Request counts per instance: phase 1 costs one request in single-shot
/// mode (N in per-candidate mode), phases 2 and 3 cost one each, and subsets
/// without phase 3 spend one extra request on the direct next-step prompt.
pub fn run_cop(
    instance: &Instance,
    config: &PipelineConfig,
    provider: &dyn Provider,
    templates: &TemplateSet,
) -> RunResult {
    let mut trace = TraceState::default();
    let outcome = run_cop_inner(instance, config, provider, templates, &mut trace);
    let mode = format!("cop:{}", config.phases.label());
    finish_run(instance, &mode, config, trace, outcome)
}

fn run_cop_inner(
    instance: &Instance,
    config: &PipelineConfig,
    provider: &dyn Provider,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<Prediction, (String, CopError)> {
    let (selected, scores) = phase1_retrieve(
        &instance.image,
        &instance.candidates,
        provider,
        config.retrieval_mode,
        config.score_scale_max,
        templates,
        trace,
    )
    .map_err(|e| ("phase1".to_string(), e))?;
    trace.artifacts.selected_candidate = Some(selected as u32);
    trace.artifacts.phase1_scores = scores;
    let candidate = &instance.candidates[selected];
    trace.artifacts.selected_procedure_id = Some(candidate.procedure_id.clone());

    let (working, map) = if config.phases.phase2 {
        phase2_decompose(&candidate.steps, provider, templates, trace)
            .map_err(|e| ("phase2".to_string(), e))?
    } else {
        (
            candidate.steps.clone(),
            DecompositionMap::identity(candidate.steps.len()),
        )
    };

    let mut prediction = if config.phases.phase3 {
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
    } else {
        let working_candidate = crate::forge::CandidateProcedure {
            procedure_id: candidate.procedure_id.clone(),
            steps: working,
        };
        direct_predict(
            &instance.image,
            &working_candidate,
            provider,
            templates,
            trace,
        )
        .map_err(|e| (DIRECT.to_string(), e))?
    };
    prediction.selected_procedure_id = Some(candidate.procedure_id.clone());
    Ok(prediction)
}

/// The single-request baseline: all candidate manuals inline, the final
/// `step_X:` line of the response is the prediction. `cot` keeps the
/// think-step-by-step phrasing; false switches to the zero-shot variant.
pub fn baseline_direct(
    instance: &Instance,
    provider: &dyn Provider,
    templates: &TemplateSet,
    cot: bool,
) -> RunResult {
    let mut trace = TraceState::default();
    let template = if cot {
        templates::BASELINE
    } else {
        templates::BASELINE_ZERO_SHOT
    };
    let instruction = templates
        .render(
            template,
            &[("STEPS", &render_candidates(&instance.candidates))],
        )
        .expect("builtin template");
    let outcome = trace
        .issue(provider, BASELINE, &instruction, &[&instance.image])
        .map_err(CopError::from)
        .and_then(|response| parse_next_step_response(&response, None))
        .map_err(|e| (BASELINE.to_string(), e));
    finish_run(
        instance,
        BASELINE,
        &PipelineConfig::default(),
        trace,
        outcome,
    )
}

/// How a dataset run executes each instance.
#[derive(Debug, Clone)]
pub enum RunMode {
    Baseline {
        cot: bool,
    },
    Cop(PipelineConfig),
    Clip {
        mode: ClipMode,
        config: PipelineConfig,
    },
}

impl RunMode {
    pub fn label(&self) -> String {
        match self {
            RunMode::Baseline { cot: true } => "baseline".into(),
            RunMode::Baseline { cot: false } => "baseline:zero_shot".into(),
            RunMode::Cop(config) => format!("cop:{}", config.phases.label()),
            RunMode::Clip { mode, .. } => mode.label().to_string(),
        }
    }
}

/// Runs every instance (concurrently up to `workers`), returning results
/// sorted by instance id. Per-instance failures are recorded, not raised.
pub fn run_dataset(
    instances: &[Instance],
    mode: &RunMode,
    provider: Option<&dyn Provider>,
    store: Option<&EmbeddingStore>,
    templates: &TemplateSet,
    workers: usize,
) -> Result<Vec<RunResult>, CopError> {
    let missing_provider = || CopError::InvalidPipeline("this run mode requires a provider".into());
    let mut results = match mode {
        RunMode::Baseline { cot } => {
            let provider = provider.ok_or_else(missing_provider)?;
            run_batch(instances, workers, |_, instance| {
                baseline_direct(instance, provider, templates, *cot)
            })
        }
        RunMode::Cop(config) => {
            let provider = provider.ok_or_else(missing_provider)?;
            run_batch(instances, workers, |_, instance| {
                run_cop(instance, config, provider, templates)
            })
        }
        RunMode::Clip {
            mode: clip_mode,
            config,
        } => {
            let store = store.ok_or_else(|| {
                CopError::InvalidPipeline("clip modes require an embedding store".into())
            })?;
            if !matches!(clip_mode, ClipMode::Full) && provider.is_none() {
                return Err(missing_provider());
            }
            run_batch(instances, workers, |_, instance| {
                clip_variant(instance, *clip_mode, store, provider, config, templates)
            })
        }
    };
    results.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));
    Ok(results)
}
