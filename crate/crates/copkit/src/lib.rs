//! copkit builds visual-procedure QA benchmarks from procedural corpora and
//! evaluates vision-language models on them through a staged
//! retrieve/decompose/predict pipeline.
//!
//! The crate is organized around seven pieces:
//!
//! - [`model`] — procedures, steps, visual states, step-label parsing, and
//!   seeded permutations.
//! - [`embed`] — fixed-dimension vector storage with cosine similarity and
//!   exact top-k search.
//! - [`gateway`] — pluggable model providers: scripted (deterministic),
//!   HTTP-backed, response caching, token budgets, and usage accounting.
//! - [`forge`] — benchmark construction: step fusion, hard-negative mining,
//!   instance assembly, splits, and statistics.
//! - [`cop`] — the staged pipeline, the direct baseline, phase-subset
//!   ablations, and retrieval-only variants.
//! - [`subtasks`] — the five diagnostic sub-tasks and their scoring.
//! - [`metrics`] — accuracy, token-overlap/embedding similarity, judge-panel
//!   scoring, agreement statistics, and grouped breakdowns.
//!
//! Everything is deterministic given (inputs, seed) when run against
//! scripted providers; see the `examples/` directory for end-to-end usage.

pub mod cli;
pub mod cop;
pub mod embed;
pub mod forge;
pub mod gateway;
pub mod metrics;
pub mod model;
pub mod subtasks;
pub mod synth;
pub mod templates;
pub mod util;
