//! Evaluation-stack tour: token-overlap similarity, a three-judge panel
//! scoring a prediction 0-10 (normalized to percent), pairwise human-eval
//! tallies, and Fleiss kappa over an annotation matrix.
//!
//! ```text
//! cargo run --example judge_panel
//! ```

use std::sync::Arc;

use copkit::gateway::{Provider, Rule, ScriptedProvider};
use copkit::metrics::{
    fleiss_kappa, llm_score, pairwise_tally, similarity_score, AnnotationMatrix, JudgePanel,
    PairwiseJudgment, SimilarityMode,
};

fn judge(id: &str, score: &str) -> Arc<dyn Provider> {
    // Real panels wire HTTP providers here; scripted judges keep the
    // example offline.
    Arc::new(
        ScriptedProvider::new(id)
            .with_rule(Rule::new(score).when_contains("Score the predicted next step")),
    )
}

fn main() {
    let reference = "Tighten the drain plug and refill the engine oil";
    let prediction = "Refill the engine oil after tightening the drain plug";

    let f1 = similarity_score(prediction, reference, SimilarityMode::TokenOverlap).unwrap();
    println!("token-overlap F1: {f1:.3}");

    let panel = JudgePanel::new(vec![judge("j1", "8"), judge("j2", "9"), judge("j3", "10")]);
    let score = llm_score(prediction, reference, &panel).unwrap();
    println!(
        "judge panel: {:?} -> {:.1}%",
        score.per_judge, score.score_percent
    );

    let judgments = [
        vec![PairwiseJudgment::Better; 13],
        vec![PairwiseJudgment::Equivalent; 4],
        vec![PairwiseJudgment::Worse; 3],
    ]
    .concat();
    let tally = pairwise_tally(&judgments).unwrap();
    println!(
        "pairwise tally over {}: win {:.0}% / equal {:.0}% / loss {:.0}%",
        tally.total, tally.win_percent, tally.equal_percent, tally.loss_percent
    );

    // Three annotators judged 20 items into Better/Equivalent/Worse.
    let rows: Vec<Vec<u64>> = (0..20)
        .map(|i| match i % 4 {
            0 => vec![3, 0, 0],
            1 => vec![2, 1, 0],
            2 => vec![0, 3, 0],
            _ => vec![1, 1, 1],
        })
        .collect();
    let matrix = AnnotationMatrix::new(rows).unwrap();
    let kappa = fleiss_kappa(&matrix).unwrap();
    println!(
        "fleiss kappa over {} items x {} annotators: {kappa:.3}",
        matrix.items(),
        matrix.annotators()
    );
}
