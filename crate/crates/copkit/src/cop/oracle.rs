//! Builds scripted-provider rules that answer every pipeline prompt
//! correctly for a set of instances. The rules key on image ids and on
//! distinctive prompt headers, so instances must carry distinct image ids
//! (the synthetic generator guarantees this). Intended for offline pipeline
//! testing and golden fixtures; candidates are answered as presented, so
//! fixtures built with fusion disabled behave as true oracles end to end.

use crate::forge::Instance;
use crate::gateway::Rule;
use crate::model::format_step_label;

use super::render::render_step_lines;

/// Needle identifying phase-1 single-shot retrieval prompts.
pub(crate) const PHASE1_NEEDLE: &str = "Identify which instruction manual";
/// Needle identifying phase-2 decomposition prompts.
pub(crate) const PHASE2_NEEDLE: &str = "Identify and split the combined steps";
/// Needle identifying phase-3 current-step prompts.
pub(crate) const PHASE3_NEEDLE: &str = "Identify which step in the instruction";
/// Needle identifying baseline and direct next-step prompts.
pub(crate) const BASELINE_NEEDLE: &str = "## Instruction Manuals:";
/// Needle identifying per-candidate scoring prompts.
pub(crate) const SCORE_NEEDLE: &str = "Does this procedure accurately reflect";

/// Rules under which a scripted provider answers phase 1, phase 2, phase 3,
/// per-candidate scoring, and baseline/direct prompts correctly for every
/// instance.
pub fn oracle_rules(instances: &[Instance]) -> Vec<Rule> {
    let mut rules = Vec::new();
    for instance in instances {
        let positive = instance.positive();
        let alignment = instance.positive_alignment();
        let presented_current = alignment
            .fused_for(instance.after_step)
            .unwrap_or(instance.after_step);
        let current_text = positive
            .steps
            .get(presented_current as usize - 1)
            .map(|s| s.text.clone())
            .unwrap_or_default();

        // Phase 1 single shot: the positive's 1-based candidate position.
        rules.push(
            Rule::new(format!("{}", instance.label + 1))
                .when_image(&instance.image)
                .when_contains(PHASE1_NEEDLE),
        );
        // Per-candidate scoring: 10 for the positive, 1 for distractors.
        // Scoring prompts carry no candidate numbering, so rules key on each
        // candidate's first step text (unique in synthetic corpora).
        for (i, candidate) in instance.candidates.iter().enumerate() {
            if let Some(first) = candidate.steps.first() {
                let score = if i as u32 == instance.label {
                    "10"
                } else {
                    "1"
                };
                rules.push(
                    Rule::new(score)
                        .when_image(&instance.image)
                        .when_contains(SCORE_NEEDLE)
                        .when_contains(first.text.clone()),
                );
            }
        }
        // Phase 2: echo the positive as presented (identity decomposition).
        if let Some(first) = positive.steps.first() {
            rules.push(
                Rule::new(render_step_lines(&positive.steps))
                    .when_contains(PHASE2_NEEDLE)
                    .when_contains(first.text.clone()),
            );
        }
        // Phase 3: the presented current step.
        rules.push(
            Rule::new(format_step_label(presented_current, &current_text))
                .when_image(&instance.image)
                .when_contains(PHASE3_NEEDLE),
        );
        // Baseline and direct prompts: the gold next step, labeled with the
        // presented successor position.
        rules.push(
            Rule::new(format_step_label(
                presented_current + 1,
                &instance.gold_next_step,
            ))
            .when_image(&instance.image)
            .when_contains(BASELINE_NEEDLE),
        );
    }
    rules
}
