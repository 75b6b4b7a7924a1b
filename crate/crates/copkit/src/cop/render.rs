//! Prompt-material rendering shared by the pipeline, the baseline, and the
//! sub-task harness, plus parsing of selection responses.

use crate::forge::CandidateProcedure;
use crate::model::Step;
use crate::util::trailing_integer;

/// Renders steps as `step_<i>: <text>` lines in presentation order.
pub fn render_step_lines(steps: &[Step]) -> String {
    steps
        .iter()
        .enumerate()
        .map(|(i, step)| format!("step_{}: {}", i + 1, step.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Renders one numbered manual block (`### Instruction <n>:` then step lines).
pub fn render_candidate_block(position: usize, candidate: &CandidateProcedure) -> String {
    format!(
        "### Instruction {}:\n{}",
        position + 1,
        render_step_lines(&candidate.steps)
    )
}

/// Renders all candidate manuals for multi-candidate prompts.
pub fn render_candidates(candidates: &[CandidateProcedure]) -> String {
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| render_candidate_block(i, c))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Parses a retrieval selection: the last integer in the response must name
/// a candidate in `1..=n`. Returns the 0-based candidate index.
pub fn parse_selection(response: &str, n: usize) -> Option<usize> {
    let value = trailing_integer(response)?;
    if value >= 1 && value <= n as i64 {
        Some(value as usize - 1)
    } else {
        None
    }
}

/// Parses a 0..=max score via trailing-integer extraction.
pub fn parse_score(response: &str, max: u32) -> Option<u32> {
    let value = trailing_integer(response)?;
    if value >= 0 && value <= max as i64 {
        Some(value as u32)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn candidate(id: &str, texts: &[&str]) -> CandidateProcedure {
        CandidateProcedure {
            procedure_id: id.to_string(),
            steps: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Step::new(i as u32 + 1, *t))
                .collect(),
        }
    }

    #[test]
    fn step_lines_are_renumbered_by_position() {
        let mut steps = vec![Step::new(4, "later"), Step::new(1, "earlier")];
        steps[0].index = 4;
        assert_eq!(render_step_lines(&steps), "step_1: later\nstep_2: earlier");
    }

    #[test]
    fn candidate_blocks_are_numbered_from_one() {
        let candidates = vec![candidate("a", &["x", "y"]), candidate("b", &["z"])];
        let block = render_candidates(&candidates);
        assert_eq!(
            block,
            "### Instruction 1:\nstep_1: x\nstep_2: y\n\n### Instruction 2:\nstep_1: z"
        );
    }

    #[test]
    fn selection_parses_bracketed_and_bare_forms() {
        assert_eq!(parse_selection("2", 3), Some(1));
        assert_eq!(parse_selection("[3]", 3), Some(2));
        assert_eq!(parse_selection("Instruction 1", 3), Some(0));
        assert_eq!(parse_selection("4", 3), None);
        assert_eq!(parse_selection("none of them", 3), None);
    }

    #[test]
    fn scores_are_range_checked() {
        assert_eq!(parse_score("Score: 9", 10), Some(9));
        assert_eq!(parse_score("0", 10), Some(0));
        assert_eq!(parse_score("11", 10), None);
        assert_eq!(parse_score("n/a", 10), None);
    }
}
