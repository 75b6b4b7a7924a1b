//! The three pipeline phases: candidate retrieval, step decomposition with
//! an order-preserving validity guard, and current-step identification with
//! local next-step resolution.

use serde::{Deserialize, Serialize};

use crate::forge::CandidateProcedure;
use crate::gateway::Provider;
use crate::model::{parse_step_label, Step};
use crate::templates::{self, TemplateSet};
use crate::util::normalize_text;

use super::render::{parse_score, parse_selection, render_candidates, render_step_lines};
use super::trace::TraceState;
use super::{CopError, Prediction, RetrievalMode, PROCEDURE_COMPLETE};

pub(crate) const PHASE1: &str = "phase1";
pub(crate) const PHASE2: &str = "phase2";
pub(crate) const PHASE3: &str = "phase3";

/// Phase 1: pick the candidate manual matching the image. In single-shot
/// mode one request lists every candidate and the returned instruction id is
/// parsed; on an unparseable id the per-candidate scoring mode runs once as
/// a fallback. Per-candidate mode asks for a 0..=scale alignment score per
/// candidate and takes the argmax (ties break toward the lowest position).
pub fn phase1_retrieve(
    image_id: &str,
    candidates: &[CandidateProcedure],
    provider: &dyn Provider,
    mode: RetrievalMode,
    score_scale_max: u32,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<(usize, Option<Vec<f64>>), CopError> {
    if candidates.is_empty() {
        return Err(CopError::EmptyCandidates);
    }
    match mode {
        RetrievalMode::SingleShot => {
            let instruction = templates
                .render(
                    templates::PHASE1_RETRIEVE,
                    &[("STEPS", &render_candidates(candidates))],
                )
                .expect("builtin template");
            let response = trace.issue(provider, PHASE1, &instruction, &[image_id])?;
            match parse_selection(&response, candidates.len()) {
                Some(index) => Ok((index, None)),
                None => {
                    trace.warn(format!(
                        "single-shot selection unparseable ({response:?}); falling back to per-candidate scoring"
                    ));
                    score_candidates(
                        image_id,
                        candidates,
                        provider,
                        score_scale_max,
                        templates,
                        trace,
                    )
                }
            }
        }
        RetrievalMode::PerCandidateScore => score_candidates(
            image_id,
            candidates,
            provider,
            score_scale_max,
            templates,
            trace,
        ),
    }
}

fn score_candidates(
    image_id: &str,
    candidates: &[CandidateProcedure],
    provider: &dyn Provider,
    scale_max: u32,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<(usize, Option<Vec<f64>>), CopError> {
    let mut scores = Vec::with_capacity(candidates.len());
    let mut any_parsed = false;
    for candidate in candidates {
        let instruction = templates
            .render(
                templates::PHASE1_SCORE,
                &[
                    ("STEPS", render_step_lines(&candidate.steps).as_str()),
                    ("MAX", scale_max.to_string().as_str()),
                ],
            )
            .expect("builtin template");
        let response = trace.issue(provider, PHASE1, &instruction, &[image_id])?;
        match parse_score(&response, scale_max) {
            Some(score) => {
                any_parsed = true;
                scores.push(score as f64);
            }
            None => {
                trace.warn(format!(
                    "unparseable candidate score {response:?}; treated as 0"
                ));
                scores.push(0.0);
            }
        }
    }
    if !any_parsed {
        return Err(CopError::UnparseableSelection {
            response: "no candidate score could be parsed".into(),
        });
    }
    let mut best = 0usize;
    for (i, score) in scores.iter().enumerate() {
        if *score > scores[best] {
            best = i;
        }
    }
    Ok((best, Some(scores)))
}

/// Maps each decomposed step back to the 1-based input step it came from.
/// Monotone non-decreasing over output positions and onto the inputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionMap {
    pub output_to_input: Vec<u32>,
}

impl DecompositionMap {
    pub fn identity(len: usize) -> Self {
        Self {
            output_to_input: (1..=len as u32).collect(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.output_to_input
            .iter()
            .enumerate()
            .all(|(i, &v)| v == i as u32 + 1)
    }

    pub fn len(&self) -> usize {
        self.output_to_input.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output_to_input.is_empty()
    }

    /// 1-based input step for a 1-based output position.
    pub fn input_for(&self, output_pos: u32) -> u32 {
        self.output_to_input[output_pos as usize - 1]
    }

    /// True when the output at `output_pos` (1-based) is the last one mapped
    /// to its input step.
    pub fn is_last_child(&self, output_pos: u32) -> bool {
        let idx = output_pos as usize - 1;
        match self.output_to_input.get(idx + 1) {
            Some(&next_input) => next_input != self.output_to_input[idx],
            None => true,
        }
    }
}

/// Aligns a decomposition response against its input steps. Each input must
/// receive one or more consecutive outputs, in order: an output equal to the
/// current input (normalized) closes it; otherwise outputs are consumed as
/// split fragments until the next input's text appears. Returns `None` for
/// reordered, dropped, or starved inputs.
fn infer_decomposition(inputs: &[String], outputs: &[String]) -> Option<DecompositionMap> {
    if outputs.len() < inputs.len() || inputs.is_empty() {
        return None;
    }
    let norm_in: Vec<String> = inputs.iter().map(|s| normalize_text(s)).collect();
    let norm_out: Vec<String> = outputs.iter().map(|s| normalize_text(s)).collect();
    let mut map = Vec::with_capacity(outputs.len());
    let mut k = 0usize;
    for i in 0..norm_in.len() {
        if k >= norm_out.len() {
            return None; // input starved
        }
        if norm_out[k] == norm_in[i] {
            map.push(i as u32 + 1);
            k += 1;
            continue;
        }
        // Split: consume fragments until the next input's text shows up.
        let start = k;
        if i + 1 == norm_in.len() {
            while k < norm_out.len() {
                map.push(i as u32 + 1);
                k += 1;
            }
        } else {
            while k < norm_out.len() && norm_out[k] != norm_in[i + 1] {
                map.push(i as u32 + 1);
                k += 1;
            }
        }
        if k == start {
            return None; // zero outputs for this input: dropped or reordered
        }
    }
    if k != norm_out.len() {
        return None;
    }
    Some(DecompositionMap {
        output_to_input: map,
    })
}

/// Phase 2: ask the provider to split combined steps. Fail-open: any
/// response that cannot be parsed into an order-preserving refinement passes
/// the original steps through unchanged with a trace warning.
pub fn phase2_decompose(
    steps: &[Step],
    provider: &dyn Provider,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<(Vec<Step>, DecompositionMap), CopError> {
    let instruction = templates
        .render(
            templates::PHASE2_DECOMPOSE,
            &[("STEPS", &render_step_lines(steps))],
        )
        .expect("builtin template");
    let response = trace.issue(provider, PHASE2, &instruction, &[])?;

    let outputs: Vec<String> = response
        .lines()
        .filter_map(|line| parse_step_label(line).ok())
        .map(|(_, content)| content)
        .filter(|content| !content.is_empty())
        .collect();
    let inputs: Vec<String> = steps.iter().map(|s| s.text.clone()).collect();

    match infer_decomposition(&inputs, &outputs) {
        Some(map) => {
            let decomposed: Vec<Step> = outputs
                .iter()
                .enumerate()
                .map(|(pos, text)| {
                    let pos1 = pos as u32 + 1;
                    let source = &steps[map.input_for(pos1) as usize - 1];
                    // Image refs only carry over for unsplit steps; a
                    // fragment's image mapping is unknown.
                    let sole_child = map.is_last_child(pos1)
                        && (pos == 0 || map.input_for(pos1 - 1) != map.input_for(pos1));
                    Step {
                        index: pos1,
                        text: text.clone(),
                        image_refs: if sole_child {
                            source.image_refs.clone()
                        } else {
                            Vec::new()
                        },
                        atomic: true,
                    }
                })
                .collect();
            trace.artifacts.decomposed_steps =
                Some(decomposed.iter().map(|s| s.text.clone()).collect());
            trace.artifacts.decomposition_map = Some(map.output_to_input.clone());
            Ok((decomposed, map))
        }
        None => {
            trace.warn(format!(
                "decomposition rejected (not an order-preserving refinement); original steps pass through: {response:?}"
            ));
            Ok((steps.to_vec(), DecompositionMap::identity(steps.len())))
        }
    }
}

/// Phase 3: one request identifies the current step; the next step is then
/// resolved locally. Inside a split, the successor is the following
/// fragment; at the last fragment of an input step the successor is the next
/// ORIGINAL step's text via the decomposition map. The final step yields the
/// completion sentinel.
pub fn phase3_predict(
    image_id: &str,
    working: &[Step],
    map: &DecompositionMap,
    original: &[Step],
    provider: &dyn Provider,
    templates: &TemplateSet,
    trace: &mut TraceState,
) -> Result<Prediction, CopError> {
    let instruction = templates
        .render(
            templates::PHASE3_IDENTIFY,
            &[("STEPS", &render_step_lines(working))],
        )
        .expect("builtin template");
    let response = trace.issue(provider, PHASE3, &instruction, &[image_id])?;
    let (current, _content) =
        parse_step_label(&response).map_err(|_| CopError::UnparseableCurrentStep {
            response: response.clone(),
        })?;
    if current == 0 || current as usize > working.len() {
        return Err(CopError::IndexOutOfRange {
            index: current,
            len: working.len(),
        });
    }
    trace.artifacts.working_current_step = Some(current);
    let current_original = map.input_for(current);

    let prediction = if current as usize == working.len() {
        Prediction {
            next_step_text: PROCEDURE_COMPLETE.to_string(),
            next_step_index: None,
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    } else if map.is_last_child(current) {
        let next_original = current_original + 1;
        let text = original[next_original as usize - 1].text.clone();
        Prediction {
            next_step_text: text,
            next_step_index: Some(next_original),
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    } else {
        let next_pos = current + 1;
        Prediction {
            next_step_text: working[next_pos as usize - 1].text.clone(),
            next_step_index: Some(map.input_for(next_pos)),
            current_step_index: Some(current_original),
            selected_procedure_id: None,
        }
    };
    Ok(prediction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Rule, ScriptedProvider};
    use std::sync::Arc;

    fn steps(texts: &[&str]) -> Vec<Step> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Step::new(i as u32 + 1, *t))
            .collect()
    }

    fn candidates(n: usize) -> Vec<CandidateProcedure> {
        (0..n)
            .map(|i| CandidateProcedure {
                procedure_id: format!("proc-{i}"),
                steps: steps(&[
                    &format!("cand {i} opens the casing"),
                    &format!("cand {i} removes the filter"),
                    &format!("cand {i} seals the casing"),
                ]),
            })
            .collect()
    }

    fn set() -> TemplateSet {
        TemplateSet::builtin()
    }

    #[test]
    fn single_shot_issues_one_request_even_for_one_candidate() {
        let provider = Arc::new(ScriptedProvider::new("s").with_default_text("[1]"));
        let mut trace = TraceState::default();
        let (index, scores) = phase1_retrieve(
            "img",
            &candidates(1),
            &provider,
            RetrievalMode::SingleShot,
            10,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(index, 0);
        assert!(scores.is_none());
        assert_eq!(trace.records.len(), 1);
        assert_eq!(provider.calls(), 1);
    }

    #[test]
    fn per_candidate_argmax_selects_highest() {
        let cands = candidates(3);
        let provider = ScriptedProvider::new("s")
            .with_rule(Rule::new("3").when_contains("cand 0 opens"))
            .with_rule(Rule::new("9").when_contains("cand 1 opens"))
            .with_rule(Rule::new("5").when_contains("cand 2 opens"));
        let mut trace = TraceState::default();
        let (index, scores) = phase1_retrieve(
            "img",
            &cands,
            &provider,
            RetrievalMode::PerCandidateScore,
            10,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(index, 1);
        assert_eq!(scores, Some(vec![3.0, 9.0, 5.0]));
        assert_eq!(trace.records.len(), 3);
    }

    #[test]
    fn per_candidate_ties_break_to_lowest_position() {
        let cands = candidates(3);
        let provider = ScriptedProvider::new("s")
            .with_rule(Rule::new("7").when_contains("cand 0 opens"))
            .with_rule(Rule::new("7").when_contains("cand 1 opens"))
            .with_rule(Rule::new("1").when_contains("cand 2 opens"));
        let mut trace = TraceState::default();
        let (index, _) = phase1_retrieve(
            "img",
            &cands,
            &provider,
            RetrievalMode::PerCandidateScore,
            10,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(index, 0);
    }

    #[test]
    fn single_shot_falls_back_to_scoring_once() {
        let cands = candidates(2);
        let provider = ScriptedProvider::new("s")
            .with_rule(Rule::new("no id here").when_contains("instruction manual"))
            .with_rule(Rule::new("2").when_contains("cand 0 opens"))
            .with_rule(Rule::new("8").when_contains("cand 1 opens"));
        let mut trace = TraceState::default();
        let (index, scores) = phase1_retrieve(
            "img",
            &cands,
            &provider,
            RetrievalMode::SingleShot,
            10,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(index, 1);
        assert_eq!(scores, Some(vec![2.0, 8.0]));
        assert_eq!(trace.records.len(), 3); // 1 failed single shot + 2 scores
        assert!(!trace.warnings.is_empty());
    }

    #[test]
    fn retrieval_errors_when_nothing_parses() {
        let provider = ScriptedProvider::new("s").with_default_text("garbage");
        let mut trace = TraceState::default();
        let err = phase1_retrieve(
            "img",
            &candidates(2),
            &provider,
            RetrievalMode::SingleShot,
            10,
            &set(),
            &mut trace,
        )
        .unwrap_err();
        assert!(matches!(err, CopError::UnparseableSelection { .. }));
    }

    #[test]
    fn decompose_echo_is_identity() {
        let input = steps(&["open the lid", "pour the mix", "close the lid"]);
        let echo = "step_1: open the lid\nstep_2: pour the mix\nstep_3: close the lid";
        let provider = ScriptedProvider::new("s").with_default_text(echo);
        let mut trace = TraceState::default();
        let (out, map) = phase2_decompose(&input, &provider, &set(), &mut trace).unwrap();
        assert_eq!(out.len(), 3);
        assert!(map.is_identity());
        assert_eq!(out[1].text, "pour the mix");
    }

    #[test]
    fn decompose_split_maps_children_to_source() {
        let input = steps(&["open the lid", "pour the mix. stir well", "close the lid"]);
        let split =
            "step_1: open the lid\nstep_2: pour the mix\nstep_3: stir well\nstep_4: close the lid";
        let provider = ScriptedProvider::new("s").with_default_text(split);
        let mut trace = TraceState::default();
        let (out, map) = phase2_decompose(&input, &provider, &set(), &mut trace).unwrap();
        assert_eq!(out.len(), 4);
        assert_eq!(map.output_to_input, vec![1, 2, 2, 3]);
        assert!(!map.is_last_child(2));
        assert!(map.is_last_child(3));
    }

    #[test]
    fn decompose_reorder_is_rejected_fail_open() {
        let input = steps(&["alpha", "beta", "gamma"]);
        let reordered = "step_1: beta\nstep_2: alpha\nstep_3: gamma";
        let provider = ScriptedProvider::new("s").with_default_text(reordered);
        let mut trace = TraceState::default();
        let (out, map) = phase2_decompose(&input, &provider, &set(), &mut trace).unwrap();
        assert_eq!(out, input);
        assert!(map.is_identity());
        assert!(trace
            .warnings
            .iter()
            .any(|w| w.contains("decomposition rejected")));
    }

    #[test]
    fn decompose_dropped_step_is_rejected_fail_open() {
        let input = steps(&["alpha", "beta", "gamma"]);
        let dropped = "step_1: alpha\nstep_2: gamma";
        let provider = ScriptedProvider::new("s").with_default_text(dropped);
        let mut trace = TraceState::default();
        let (out, map) = phase2_decompose(&input, &provider, &set(), &mut trace).unwrap();
        assert_eq!(out, input);
        assert!(map.is_identity());
    }

    #[test]
    fn phase3_successor_inside_working_sequence() {
        let working = steps(&[
            "find the valve",
            "turn the valve",
            "check pressure",
            "log it",
        ]);
        let map = DecompositionMap::identity(4);
        let provider = ScriptedProvider::new("s").with_default_text("step_2: turn the valve");
        let mut trace = TraceState::default();
        let prediction = phase3_predict(
            "img",
            &working,
            &map,
            &working,
            &provider,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(prediction.next_step_text, "check pressure");
        assert_eq!(prediction.next_step_index, Some(3));
        assert_eq!(prediction.current_step_index, Some(2));
    }

    #[test]
    fn phase3_last_step_yields_completion_sentinel() {
        let working = steps(&["a", "b"]);
        let map = DecompositionMap::identity(2);
        let provider = ScriptedProvider::new("s").with_default_text("step_2: b");
        let mut trace = TraceState::default();
        let prediction = phase3_predict(
            "img",
            &working,
            &map,
            &working,
            &provider,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(prediction.next_step_text, PROCEDURE_COMPLETE);
        assert_eq!(prediction.next_step_index, None);
    }

    #[test]
    fn phase3_lifts_last_child_to_next_original_step() {
        // Original: [A, "B1. B2", C]; decomposed working: [A, B1, B2, C].
        let original = steps(&["A", "B1. B2", "C"]);
        let working = steps(&["A", "B1", "B2", "C"]);
        let map = DecompositionMap {
            output_to_input: vec![1, 2, 2, 3],
        };
        // Current = B2 (working position 3) is the last child of original
        // step 2, so the next step lifts to original step 3's text.
        let provider = ScriptedProvider::new("s").with_default_text("step_3: B2");
        let mut trace = TraceState::default();
        let prediction = phase3_predict(
            "img",
            &working,
            &map,
            &original,
            &provider,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(prediction.next_step_text, "C");
        assert_eq!(prediction.next_step_index, Some(3));
        assert_eq!(prediction.current_step_index, Some(2));

        // Current = B1 (working position 2) is NOT the last child; the next
        // step stays inside the decomposed sequence.
        let provider = ScriptedProvider::new("s").with_default_text("step_2: B1");
        let mut trace = TraceState::default();
        let prediction = phase3_predict(
            "img",
            &working,
            &map,
            &original,
            &provider,
            &set(),
            &mut trace,
        )
        .unwrap();
        assert_eq!(prediction.next_step_text, "B2");
        assert_eq!(prediction.next_step_index, Some(2));
    }

    #[test]
    fn phase3_rejects_out_of_range_and_unlabeled() {
        let working = steps(&["a", "b"]);
        let map = DecompositionMap::identity(2);
        let provider = ScriptedProvider::new("s").with_default_text("step_9: nope");
        let mut trace = TraceState::default();
        assert!(matches!(
            phase3_predict(
                "img",
                &working,
                &map,
                &working,
                &provider,
                &set(),
                &mut trace
            ),
            Err(CopError::IndexOutOfRange { index: 9, len: 2 })
        ));
        let provider = ScriptedProvider::new("s").with_default_text("no label");
        let mut trace = TraceState::default();
        assert!(matches!(
            phase3_predict(
                "img",
                &working,
                &map,
                &working,
                &provider,
                &set(),
                &mut trace
            ),
            Err(CopError::UnparseableCurrentStep { .. })
        ));
    }
}
