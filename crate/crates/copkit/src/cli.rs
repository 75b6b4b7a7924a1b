//! Command-line entry point wiring all modules together. Verbs: `synth`,
//! `embed import`, `forge`, `run`, `eval`, `subtasks generate|score`.
//! Exit codes: 0 success, 1 internal error, 2 input error, 3 too many
//! failed instances.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::cop::{
    ClipMode, PhaseSet, PhaseTrace, PipelineConfig, Prediction, RetrievalMode, RunError, RunMode,
    RunResult,
};
use crate::embed::{load_store, save_store};
use crate::forge::{
    corpus_stats, forge_dataset, semantic_overlap, split_dataset, CorpusIndex, ForgeConfig,
    Instance, SplitSpec,
};
use crate::gateway::{
    usage_report, with_cache, BudgetedProvider, HttpProvider, HttpProviderConfig, InFlightLimited,
    PhaseUsage, Provider, Rule, ScriptedProvider, TokenLedger,
};
use crate::metrics::{
    breakdown_report, group_key, llm_score, BreakdownMetric, BreakdownTable, GroupBy, GroupRow,
    JudgePanel, StepBuckets,
};
use crate::subtasks::{
    generate_items, run_items, score_subtasks, ItemResponse, SubTaskItem, SubTaskKind,
};
use crate::synth::{generate, SynthConfig};
use crate::templates::TemplateSet;
use crate::util::{self, file_sha256, read_jsonl, sha256_hex, write_jsonl};

/// Exit codes per the CLI contract.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_TOO_MANY_FAILURES: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Internal(String),
    TooManyFailures(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
            CliError::TooManyFailures(_) => EXIT_TOO_MANY_FAILURES,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Internal(m) | CliError::TooManyFailures(m) => m,
        }
    }
}

fn input_err(err: impl Display) -> CliError {
    CliError::Input(err.to_string())
}

fn internal_err(err: impl Display) -> CliError {
    CliError::Internal(err.to_string())
}

#[derive(Parser, Debug)]
#[command(
    name = "copkit",
    about = "Build visual-procedure QA benchmarks and evaluate staged next-step prediction pipelines",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with pseudo-embeddings and a ledger.
    Synth(SynthArgs),
    /// Embedding-store utilities.
    Embed(EmbedArgs),
    /// Construct benchmark instances from a corpus and image embeddings.
    Forge(ForgeArgs),
    /// Run a provider over a dataset (baseline, pipeline, ablations,
    /// retrieval variants, or sub-task items).
    Run(RunArgs),
    /// Score results against gold instances and emit grouped reports.
    Eval(EvalArgs),
    /// Generate or score diagnostic sub-task items.
    Subtasks(SubtasksArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated domain tags.
    #[arg(long)]
    domains: Option<String>,
    #[arg(long, default_value_t = 12)]
    procedures_per_domain: usize,
    #[arg(long, default_value_t = 3)]
    min_steps: usize,
    #[arg(long, default_value_t = 12)]
    max_steps: usize,
    #[arg(long, default_value_t = 1)]
    images_per_step: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
}

#[derive(Args, Debug)]
struct EmbedArgs {
    #[command(subcommand)]
    command: EmbedCommand,
}

#[derive(Subcommand, Debug)]
enum EmbedCommand {
    /// Validate an embeddings JSONL file and write it in canonical form.
    Import {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Required dimensionality; rejected when records disagree.
        #[arg(long)]
        dim: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct ForgeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Image embeddings JSONL backing negative mining.
    #[arg(long)]
    embeddings: PathBuf,
    /// Text embeddings JSONL; when present the train/test semantic-overlap
    /// report is emitted.
    #[arg(long)]
    text_embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config file seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Instances JSONL (or sub-task items JSONL for subtasks modes).
    #[arg(long)]
    dataset: PathBuf,
    /// baseline | cop | ablation:<1|12|13|123> | clip:<p1|p3|full> |
    /// subtasks:<siv|csi|nsp|dpa|cpm|all>
    #[arg(long)]
    mode: String,
    /// Provider name from the config file.
    #[arg(long)]
    provider: Option<String>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Response cache directory (resumable runs).
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Embedding store for clip modes.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    results: PathBuf,
    /// Gold instances JSONL.
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated: accuracy,retrieval,similarity,llm
    #[arg(long, default_value = "accuracy,retrieval,similarity")]
    metrics: String,
    /// none | domain | step_length
    #[arg(long, default_value = "none")]
    group_by: String,
    /// Config file (needed for the llm metric's judge panel).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SubtasksArgs {
    #[command(subcommand)]
    command: SubtasksCommand,
}

#[derive(Subcommand, Debug)]
enum SubtasksCommand {
    /// Generate sub-task items from benchmark instances.
    Generate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated kinds or "all".
        #[arg(long, default_value = "all")]
        kinds: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score item responses.
    Score {
        #[arg(long)]
        items: PathBuf,
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

// ---------------------------------------------------------------------------
// Config file

#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    #[serde(default)]
    pub forge: Option<ForgeFileConfig>,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderConfig>,
    #[serde(default)]
    pub run: RunFileConfig,
    #[serde(default)]
    pub eval: EvalFileConfig,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ForgeFileConfig {
    #[serde(default = "default_fusion_probability")]
    pub fusion_probability: f64,
    #[serde(default = "default_num_candidates")]
    pub num_candidates: usize,
    #[serde(default = "default_strategy")]
    pub negative_strategy: String,
    #[serde(default)]
    pub mining_k: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ood_domains: BTreeSet<String>,
    #[serde(default = "default_true")]
    pub fuse_all_candidates: bool,
    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
}

fn default_fusion_probability() -> f64 {
    0.5
}

fn default_num_candidates() -> usize {
    3
}

fn default_strategy() -> String {
    "topk".into()
}

fn default_train_ratio() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Scripted {
        #[serde(default)]
        rules: Vec<Rule>,
        #[serde(default)]
        rules_file: Option<PathBuf>,
        #[serde(default)]
        default_text: Option<String>,
    },
    Http(HttpProviderConfig),
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunFileConfig {
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Instances allowed to fail before the run exits with code 3.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
    /// Total token ceiling; 0 disables budgeting.
    #[serde(default)]
    pub token_ceiling: u64,
    #[serde(default = "default_true")]
    pub baseline_cot: bool,
    #[serde(default = "default_retrieval_mode")]
    pub retrieval_mode: String,
    #[serde(default = "default_scale_max")]
    pub score_scale_max: u32,
}

fn default_concurrency() -> usize {
    4
}

fn default_max_in_flight() -> usize {
    4
}

fn default_failure_fraction() -> f64 {
    0.2
}

fn default_retrieval_mode() -> String {
    "single_shot".into()
}

fn default_scale_max() -> u32 {
    10
}

impl Default for RunFileConfig {
    fn default() -> Self {
        Self {
            concurrency: default_concurrency(),
            max_in_flight: default_max_in_flight(),
            max_failure_fraction: default_failure_fraction(),
            token_ceiling: 0,
            baseline_cot: true,
            retrieval_mode: default_retrieval_mode(),
            score_scale_max: default_scale_max(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct EvalFileConfig {
    /// Provider names acting as the judge panel for the llm metric.
    #[serde(default)]
    pub judges: Vec<String>,
    /// Inclusive upper bounds of every step-length bucket but the last.
    #[serde(default)]
    pub step_buckets: Option<Vec<u32>>,
}

/// Loads a TOML (default) or JSON (by extension) config file.
pub fn load_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| input_err(format!("cannot read config {}: {err}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text)
            .map_err(|err| input_err(format!("config {}: {err}", path.display())))
    } else {
        toml::from_str(&text).map_err(|err| input_err(format!("config {}: {err}", path.display())))
    }
}

impl FileConfig {
    pub fn templates(&self) -> Result<TemplateSet, CliError> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::with_overrides_from(dir).map_err(input_err),
            None => Ok(TemplateSet::builtin()),
        }
    }

    pub fn forge_config(
        &self,
        seed_override: Option<u64>,
    ) -> Result<(ForgeConfig, SplitSpec), CliError> {
        let file = self
            .forge
            .clone()
            .ok_or_else(|| input_err("config file has no [forge] section"))?;
        let negative_strategy = match file.negative_strategy.as_str() {
            "topk" => crate::forge::NegativeStrategy::Topk,
            "random" => crate::forge::NegativeStrategy::Random,
            other => {
                return Err(input_err(format!(
                    "unknown negative_strategy {other:?} (expected topk|random)"
                )))
            }
        };
        let config = ForgeConfig {
            fusion_probability: file.fusion_probability,
            num_candidates: file.num_candidates,
            negative_strategy,
            mining_k: file.mining_k,
            seed: seed_override.unwrap_or(file.seed),
            ood_domains: file.ood_domains.clone(),
            fuse_all_candidates: file.fuse_all_candidates,
        };
        config.validate().map_err(input_err)?;
        let spec = SplitSpec {
            ood_domains: file.ood_domains,
            train_ratio: file.train_ratio,
        };
        Ok((config, spec))
    }

    /// Builds a named provider: base (scripted or HTTP), then budget, cache,
    /// and in-flight limiting wrappers.
    pub fn build_provider(
        &self,
        name: &str,
        cache_dir: Option<&Path>,
    ) -> Result<Arc<dyn Provider>, CliError> {
        let config = self
            .providers
            .get(name)
            .ok_or_else(|| input_err(format!("provider {name:?} not found in config")))?;
        let base: Arc<dyn Provider> = match config {
            ProviderConfig::Scripted {
                rules,
                rules_file,
                default_text,
            } => {
                let mut all_rules = rules.clone();
                if let Some(path) = rules_file {
                    let loaded: Vec<Rule> = read_jsonl(path).or_else(|_| {
                        // Accept a plain JSON array as well as JSONL.
                        let text = std::fs::read_to_string(path).map_err(input_err)?;
                        serde_json::from_str(&text).map_err(input_err)
                    })?;
                    all_rules.extend(loaded);
                }
                let mut provider = ScriptedProvider::new(name).with_rules(all_rules);
                if let Some(text) = default_text {
                    provider = provider.with_default_text(text.clone());
                }
                Arc::new(provider)
            }
            ProviderConfig::Http(http) => {
                Arc::new(HttpProvider::new(name, http.clone()).map_err(input_err)?)
            }
        };
        let budgeted: Arc<dyn Provider> = if self.run.token_ceiling > 0 {
            Arc::new(BudgetedProvider::new(base, self.run.token_ceiling))
        } else {
            base
        };
        let cached: Arc<dyn Provider> = match cache_dir {
            Some(dir) => Arc::new(with_cache(budgeted, dir).map_err(internal_err)?),
            None => budgeted,
        };
        Ok(Arc::new(InFlightLimited::new(
            cached,
            self.run.max_in_flight,
        )))
    }

    pub fn pipeline_config(&self, phases: PhaseSet) -> Result<PipelineConfig, CliError> {
        let retrieval_mode = match self.run.retrieval_mode.as_str() {
            "single_shot" => RetrievalMode::SingleShot,
            "per_candidate_score" => RetrievalMode::PerCandidateScore,
            other => {
                return Err(input_err(format!(
                    "unknown retrieval_mode {other:?} (expected single_shot|per_candidate_score)"
                )))
            }
        };
        Ok(PipelineConfig {
            phases,
            retrieval_mode,
            score_scale_max: self.run.score_scale_max,
        })
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, Default, Serialize)]
pub struct TokenTotals {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
}

/// Provenance record written next to every command's outputs. Two runs with
/// equal manifests (timestamps aside) produce byte-identical output files
/// with scripted providers.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub provider_ids: Vec<String>,
    pub template_hash: String,
    pub dataset_hash: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub token_totals: TokenTotals,
    pub outputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<(), CliError> {
    let mut manifest = manifest.clone();
    for entry in std::fs::read_dir(dir).map_err(internal_err)? {
        let entry = entry.map_err(internal_err)?;
        let path = entry.path();
        if path.is_file() && path.file_name().is_some_and(|n| n != "manifest.json") {
            let name = path
                .file_name()
                .and_then(|n| n.to_str())
                .unwrap_or_default()
                .to_string();
            manifest
                .outputs
                .insert(name, file_sha256(&path).map_err(internal_err)?);
        }
    }
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(internal_err)?;
    std::fs::write(dir.join("manifest.json"), bytes).map_err(internal_err)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let bytes = serde_json::to_vec_pretty(value).map_err(internal_err)?;
    std::fs::write(path, bytes)
        .map_err(|err| internal_err(format!("write {}: {err}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|err| internal_err(format!("create {}: {err}", path.display())))
}

// ---------------------------------------------------------------------------
// Result records (results JSONL schema)

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenSummary {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub per_phase: BTreeMap<String, PhaseUsage>,
}

impl From<&TokenLedger> for TokenSummary {
    fn from(ledger: &TokenLedger) -> Self {
        Self {
            input_tokens: ledger.input_tokens(),
            output_tokens: ledger.output_tokens(),
            total_tokens: ledger.total_tokens(),
            per_phase: ledger.per_phase.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRecord {
    pub instance_id: String,
    pub config_hash: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prediction: Option<Prediction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<RunError>,
    pub trace_ref: String,
    pub tokens: TokenSummary,
}

/// Rebuilds in-memory run results from persisted records and trace files.
pub fn load_results(path: &Path) -> Result<Vec<RunResult>, CliError> {
    let records: Vec<ResultRecord> = read_jsonl(path).map_err(input_err)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut results = Vec::with_capacity(records.len());
    for record in records {
        let trace_path = base.join(&record.trace_ref);
        let trace: PhaseTrace = match std::fs::read(&trace_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(input_err)?,
            Err(_) => PhaseTrace::default(),
        };
        let mut ledger = TokenLedger::default();
        for (phase, usage) in &record.tokens.per_phase {
            ledger.per_phase.insert(phase.clone(), *usage);
        }
        results.push(RunResult {
            instance_id: record.instance_id,
            mode: String::new(),
            config_hash: record.config_hash,
            prediction: record.prediction,
            error: record.error,
            tokens: ledger,
            trace,
        });
    }
    Ok(results)
}

// ---------------------------------------------------------------------------
// Commands

fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        seed: args.seed,
        domains: args
            .domains
            .as_ref()
            .map(|d| d.split(',').map(|s| s.trim().to_string()).collect())
            .unwrap_or_else(|| SynthConfig::default().domains),
        procedures_per_domain: args.procedures_per_domain,
        min_steps: args.min_steps,
        max_steps: args.max_steps,
        images_per_step: args.images_per_step,
        embedding_dim: args.dim,
    };
    if config.min_steps < 1 || config.max_steps < config.min_steps {
        return Err(input_err("invalid step-count range"));
    }
    ensure_dir(&args.out)?;
    let started = now_unix();
    let output = generate(&config);
    crate::model::write_corpus(args.out.join("corpus.jsonl"), &output.corpus)
        .map_err(internal_err)?;
    save_store(
        args.out.join("image_embeddings.jsonl"),
        &output.image_embeddings,
    )
    .map_err(internal_err)?;
    save_store(
        args.out.join("text_embeddings.jsonl"),
        &output.text_embeddings,
    )
    .map_err(internal_err)?;
    write_json(&args.out.join("ledger.json"), &output.ledger)?;
    let manifest = RunManifest {
        command: "synth".into(),
        config_hash: sha256_hex(&serde_json::to_vec(&config).map_err(internal_err)?)[..16]
            .to_string(),
        seed: args.seed,
        provider_ids: Vec::new(),
        template_hash: String::new(),
        dataset_hash: String::new(),
        started_at_unix: started,
        finished_at_unix: now_unix(),
        token_totals: TokenTotals::default(),
        outputs: BTreeMap::new(),
        warnings: Vec::new(),
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "synth: {} procedures, {} images -> {}",
        output.ledger.procedures,
        output.ledger.images,
        args.out.display()
    );
    Ok(())
}

fn cmd_embed_import(input: &Path, out: &Path, dim: Option<usize>) -> Result<(), CliError> {
    let store = load_store(input).map_err(input_err)?;
    if let (Some(required), Some(actual)) = (dim, store.dim()) {
        if required != actual {
            return Err(input_err(format!(
                "store dimension {actual} does not match required {required}"
            )));
        }
    }
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    save_store(out, &store).map_err(internal_err)?;
    println!(
        "embed import: {} vectors (dim {:?}) -> {}",
        store.len(),
        store.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_forge(args: &ForgeArgs) -> Result<(), CliError> {
    let file_config = load_config(&args.config)?;
    let (forge_config, split_spec) = file_config.forge_config(args.seed)?;
    let corpus = crate::model::read_corpus(&args.corpus).map_err(input_err)?;
    let corpus = CorpusIndex::build(corpus).map_err(input_err)?;
    let store = load_store(&args.embeddings).map_err(input_err)?;
    ensure_dir(&args.out)?;
    let started = now_unix();

    let output = forge_dataset(&corpus, &store, &forge_config).map_err(input_err)?;
    let split = split_dataset(&output.instances, &split_spec, forge_config.seed);
    write_jsonl(args.out.join("instances.jsonl"), &output.instances).map_err(internal_err)?;
    write_jsonl(args.out.join("train.jsonl"), &split.train).map_err(internal_err)?;
    write_jsonl(args.out.join("test.jsonl"), &split.test).map_err(internal_err)?;

    let stats = corpus_stats(&[("train", &split.train), ("test", &split.test)]);
    write_json(&args.out.join("stats.json"), &stats)?;
    std::fs::write(args.out.join("stats.txt"), stats.to_text()).map_err(internal_err)?;

    let mut warnings: Vec<String> = output
        .skipped
        .iter()
        .map(|(id, reason)| format!("skipped {id}: {reason}"))
        .collect();
    warnings.extend(split.warnings.clone());

    if let Some(text_path) = &args.text_embeddings {
        let text_store = load_store(text_path).map_err(input_err)?;
        match semantic_overlap(&split.train, &split.test, &text_store) {
            Ok(report) => write_json(&args.out.join("overlap.json"), &report)?,
            Err(err) => warnings.push(format!("overlap skipped: {err}")),
        }
    }

    let manifest = RunManifest {
        command: "forge".into(),
        config_hash: sha256_hex(&serde_json::to_vec(&forge_config).map_err(internal_err)?)[..16]
            .to_string(),
        seed: forge_config.seed,
        provider_ids: Vec::new(),
        template_hash: String::new(),
        dataset_hash: file_sha256(&args.corpus).map_err(input_err)?,
        started_at_unix: started,
        finished_at_unix: now_unix(),
        token_totals: TokenTotals::default(),
        outputs: BTreeMap::new(),
        warnings,
    };
    write_manifest(&args.out, &manifest)?;
    println!(
        "forge: {} instances ({} train / {} test), {} skipped -> {}",
        output.instances.len(),
        split.train.len(),
        split.test.len(),
        output.skipped.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_run_mode(text: &str, config: &FileConfig) -> Result<Option<RunMode>, CliError> {
    // None means a subtasks mode, handled separately.
    let mode = match text {
        "baseline" => Some(RunMode::Baseline {
            cot: config.run.baseline_cot,
        }),
        "cop" => Some(RunMode::Cop(config.pipeline_config(PhaseSet::full())?)),
        other => {
            if let Some(set) = other.strip_prefix("ablation:") {
                let phases = PhaseSet::parse(set).map_err(input_err)?;
                Some(RunMode::Cop(config.pipeline_config(phases)?))
            } else if let Some(clip) = other.strip_prefix("clip:") {
                let mode = match clip {
                    "p1" => ClipMode::P1,
                    "p3" => ClipMode::P3,
                    "full" => ClipMode::Full,
                    unknown => {
                        return Err(input_err(format!(
                            "unknown clip mode {unknown:?} (expected p1|p3|full)"
                        )))
                    }
                };
                Some(RunMode::Clip {
                    mode,
                    config: config.pipeline_config(PhaseSet::full())?,
                })
            } else if other.starts_with("subtasks:") {
                None
            } else {
                return Err(input_err(format!(
                    "unknown mode {other:?} (expected baseline|cop|ablation:<set>|clip:<mode>|subtasks:<kind>)"
                )));
            }
        }
    };
    Ok(mode)
}

fn trace_ref_for(config_hash: &str, instance_id: &str) -> String {
    let key = sha256_hex(format!("{config_hash}:{instance_id}").as_bytes());
    format!("traces/{}.json", &key[..24])
}

fn cmd_run(args: &RunArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let templates = config.templates()?;
    let started = now_unix();
    ensure_dir(&args.out)?;
    let dataset_hash = file_sha256(&args.dataset).map_err(input_err)?;

    // Sub-task modes consume items JSONL and emit responses JSONL.
    if let Some(kind_text) = args.mode.strip_prefix("subtasks:") {
        let provider_name = args
            .provider
            .as_deref()
            .ok_or_else(|| input_err("--provider is required for subtasks modes"))?;
        let provider = config.build_provider(provider_name, args.cache_dir.as_deref())?;
        let items: Vec<SubTaskItem> = read_jsonl(&args.dataset).map_err(input_err)?;
        let selected: Vec<SubTaskItem> = if kind_text == "all" {
            items
        } else {
            let kind = SubTaskKind::parse(kind_text)
                .ok_or_else(|| input_err(format!("unknown sub-task kind {kind_text:?}")))?;
            items.into_iter().filter(|i| i.kind == kind).collect()
        };
        let workers = args.concurrency.unwrap_or(config.run.concurrency);
        let responses = run_items(&selected, provider.as_ref(), workers);
        write_jsonl(args.out.join("responses.jsonl"), &responses).map_err(internal_err)?;
        let totals = TokenTotals {
            requests: responses.len() as u64,
            input_tokens: responses.iter().map(|r| r.input_tokens).sum(),
            output_tokens: responses.iter().map(|r| r.output_tokens).sum(),
            total_tokens: responses
                .iter()
                .map(|r| r.input_tokens + r.output_tokens)
                .sum(),
        };
        let manifest = RunManifest {
            command: format!("run --mode {}", args.mode),
            config_hash: String::new(),
            seed: 0,
            provider_ids: vec![provider_name.to_string()],
            template_hash: templates.content_hash(),
            dataset_hash,
            started_at_unix: started,
            finished_at_unix: now_unix(),
            token_totals: totals,
            outputs: BTreeMap::new(),
            warnings: Vec::new(),
        };
        write_manifest(&args.out, &manifest)?;
        println!(
            "run {}: {} responses -> {}",
            args.mode,
            responses.len(),
            args.out.display()
        );
        return Ok(());
    }

    let mode = parse_run_mode(&args.mode, &config)?.expect("non-subtask mode");
    let instances: Vec<Instance> = read_jsonl(&args.dataset).map_err(input_err)?;
    let store = match &args.embeddings {
        Some(path) => Some(load_store(path).map_err(input_err)?),
        None => None,
    };
    let needs_provider = !matches!(
        mode,
        RunMode::Clip {
            mode: ClipMode::Full,
            ..
        }
    );
    let provider: Option<Arc<dyn Provider>> = if needs_provider {
        let name = args
            .provider
            .as_deref()
            .ok_or_else(|| input_err("--provider is required for this mode"))?;
        Some(config.build_provider(name, args.cache_dir.as_deref())?)
    } else {
        None
    };
    let workers = args.concurrency.unwrap_or(config.run.concurrency);

    let results = crate::cop::run_dataset(
        &instances,
        &mode,
        provider.as_deref(),
        store.as_ref(),
        &templates,
        workers,
    )
    .map_err(input_err)?;

    // Persist: results JSONL plus one trace file per instance.
    ensure_dir(&args.out.join("traces"))?;
    let mut records = Vec::with_capacity(results.len());
    for result in &results {
        let trace_ref = trace_ref_for(&result.config_hash, &result.instance_id);
        let trace_bytes = serde_json::to_vec_pretty(&result.trace).map_err(internal_err)?;
        util::write_atomic(&args.out.join(&trace_ref), &trace_bytes).map_err(internal_err)?;
        records.push(ResultRecord {
            instance_id: result.instance_id.clone(),
            config_hash: result.config_hash.clone(),
            prediction: result.prediction.clone(),
            error: result.error.clone(),
            trace_ref,
            tokens: TokenSummary::from(&result.tokens),
        });
    }
    write_jsonl(args.out.join("results.jsonl"), &records).map_err(internal_err)?;

    let report = usage_report(results.iter().map(|r| &r.tokens));
    let failures = results.iter().filter(|r| r.error.is_some()).count();
    let manifest = RunManifest {
        command: format!("run --mode {}", args.mode),
        config_hash: results
            .first()
            .map(|r| r.config_hash.clone())
            .unwrap_or_default(),
        seed: 0,
        provider_ids: provider.iter().map(|p| p.id().to_string()).collect(),
        template_hash: templates.content_hash(),
        dataset_hash,
        started_at_unix: started,
        finished_at_unix: now_unix(),
        token_totals: TokenTotals {
            requests: report.total_requests,
            input_tokens: report.total_input_tokens,
            output_tokens: report.total_output_tokens,
            total_tokens: report.total_tokens,
        },
        outputs: BTreeMap::new(),
        warnings: results
            .iter()
            .filter_map(|r| {
                r.error
                    .as_ref()
                    .map(|e| format!("{}: {} ({})", r.instance_id, e.class, e.phase))
            })
            .collect(),
    };
    write_manifest(&args.out, &manifest)?;
    write_json(&args.out.join("usage.json"), &report)?;

    println!(
        "run {}: {} instances, {} failed, {} tokens -> {}",
        args.mode,
        results.len(),
        failures,
        report.total_tokens,
        args.out.display()
    );
    if !results.is_empty() {
        let fraction = failures as f64 / results.len() as f64;
        if fraction > config.run.max_failure_fraction {
            return Err(CliError::TooManyFailures(format!(
                "{failures}/{} instances failed ({:.1}% > {:.1}%)",
                results.len(),
                fraction * 100.0,
                config.run.max_failure_fraction * 100.0
            )));
        }
    }
    Ok(())
}

fn parse_group_by(text: &str) -> Result<GroupBy, CliError> {
    match text {
        "none" => Ok(GroupBy::None),
        "domain" => Ok(GroupBy::Domain),
        "step_length" | "step_length_bucket" => Ok(GroupBy::StepLengthBucket),
        other => Err(input_err(format!(
            "unknown group-by {other:?} (expected none|domain|step_length)"
        ))),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let results = load_results(&args.results)?;
    let gold: Vec<Instance> = read_jsonl(&args.gold).map_err(input_err)?;
    let by_id: BTreeMap<&str, &Instance> = gold.iter().map(|i| (i.id.as_str(), i)).collect();
    let orphans: Vec<&str> = results
        .iter()
        .filter(|r| !by_id.contains_key(r.instance_id.as_str()))
        .map(|r| r.instance_id.as_str())
        .collect();
    if !orphans.is_empty() {
        return Err(input_err(format!(
            "join mismatch: {} result id(s) missing from gold: {}",
            orphans.len(),
            orphans.join(", ")
        )));
    }
    let group_by = parse_group_by(&args.group_by)?;
    let config = match &args.config {
        Some(path) => Some(load_config(path)?),
        None => None,
    };
    let buckets = config
        .as_ref()
        .and_then(|c| c.eval.step_buckets.clone())
        .map(|uppers| StepBuckets { uppers })
        .unwrap_or_default();

    ensure_dir(&args.out)?;
    let mut report: BTreeMap<String, BreakdownTable> = BTreeMap::new();
    let mut text_sections = Vec::new();
    for metric_name in args.metrics.split(',').map(|m| m.trim()) {
        let table = match metric_name {
            "accuracy" => breakdown_report(
                &results,
                &gold,
                group_by,
                BreakdownMetric::NextStepAccuracy,
                &buckets,
            )
            .map_err(input_err)?,
            "retrieval" => breakdown_report(
                &results,
                &gold,
                group_by,
                BreakdownMetric::RetrievalAccuracy,
                &buckets,
            )
            .map_err(input_err)?,
            "similarity" => breakdown_report(
                &results,
                &gold,
                group_by,
                BreakdownMetric::SimilarityF1,
                &buckets,
            )
            .map_err(input_err)?,
            "llm" => {
                let config = config
                    .as_ref()
                    .ok_or_else(|| input_err("the llm metric needs --config with [eval] judges"))?;
                llm_breakdown(&results, &by_id, group_by, &buckets, config)?
            }
            other => return Err(input_err(format!("unknown metric {other:?}"))),
        };
        text_sections.push(format!("# {metric_name}\n{}", table.to_text()));
        report.insert(metric_name.to_string(), table);
    }
    write_json(&args.out.join("report.json"), &report)?;
    std::fs::write(args.out.join("report.txt"), text_sections.join("\n")).map_err(internal_err)?;
    println!(
        "eval: {} results x {} metric(s) -> {}",
        results.len(),
        report.len(),
        args.out.display()
    );
    Ok(())
}

/// Judge-panel metric grouped like the built-in breakdowns. Failed or
/// missing predictions score 0 so denominators stay stable.
fn llm_breakdown(
    results: &[RunResult],
    gold: &BTreeMap<&str, &Instance>,
    group_by: GroupBy,
    buckets: &StepBuckets,
    config: &FileConfig,
) -> Result<BreakdownTable, CliError> {
    if config.eval.judges.is_empty() {
        return Err(input_err("config [eval] judges list is empty"));
    }
    let judges = config
        .eval
        .judges
        .iter()
        .map(|name| config.build_provider(name, None))
        .collect::<Result<Vec<_>, _>>()?;
    let panel = JudgePanel::new(judges);
    let mut grouped: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for result in results {
        let instance = gold
            .get(result.instance_id.as_str())
            .expect("join checked by caller");
        let value = match &result.prediction {
            Some(prediction) => {
                llm_score(&prediction.next_step_text, &instance.gold_next_step, &panel)
                    .map(|s| s.score_percent)
                    .unwrap_or(0.0)
            }
            None => 0.0,
        };
        grouped
            .entry(group_key(instance, group_by, buckets))
            .or_default()
            .push(value);
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
        metric: BreakdownMetric::NextStepAccuracy,
        group_by,
        groups,
        overall,
        total,
    })
}

fn cmd_subtasks(args: &SubtasksArgs) -> Result<(), CliError> {
    match &args.command {
        SubtasksCommand::Generate {
            dataset,
            out,
            kinds,
            seed,
            config,
        } => {
            let templates = match config {
                Some(path) => load_config(path)?.templates()?,
                None => TemplateSet::builtin(),
            };
            let instances: Vec<Instance> = read_jsonl(dataset).map_err(input_err)?;
            let kind_list: Vec<SubTaskKind> = if kinds == "all" {
                SubTaskKind::ALL.to_vec()
            } else {
                kinds
                    .split(',')
                    .map(|k| {
                        SubTaskKind::parse(k.trim())
                            .ok_or_else(|| input_err(format!("unknown sub-task kind {k:?}")))
                    })
                    .collect::<Result<_, _>>()?
            };
            let (items, warnings) = generate_items(&instances, &kind_list, *seed, &templates);
            if let Some(parent) = out.parent() {
                ensure_dir(parent)?;
            }
            write_jsonl(out, &items).map_err(internal_err)?;
            for warning in &warnings {
                log::warn!("{warning}");
            }
            println!(
                "subtasks generate: {} items ({} skipped) -> {}",
                items.len(),
                warnings.len(),
                out.display()
            );
            Ok(())
        }
        SubtasksCommand::Score {
            items,
            responses,
            out,
        } => {
            let items: Vec<SubTaskItem> = read_jsonl(items).map_err(input_err)?;
            let responses_in: Vec<ItemResponse> = read_jsonl(responses).map_err(input_err)?;
            let by_id: BTreeMap<&str, &str> = responses_in
                .iter()
                .map(|r| (r.item_id.as_str(), r.response.as_str()))
                .collect();
            let mut orphans = Vec::new();
            let mut texts = Vec::with_capacity(items.len());
            for item in &items {
                match by_id.get(item.id.as_str()) {
                    Some(text) => texts.push(text.to_string()),
                    None => {
                        orphans.push(item.id.clone());
                        texts.push(String::new());
                    }
                }
            }
            if !orphans.is_empty() {
                return Err(input_err(format!(
                    "join mismatch: no response for item(s): {}",
                    orphans.join(", ")
                )));
            }
            let table = score_subtasks(&items, &texts).map_err(input_err)?;
            ensure_dir(out)?;
            write_json(&out.join("subtask_scores.json"), &table)?;
            std::fs::write(out.join("subtask_scores.txt"), table.to_text())
                .map_err(internal_err)?;
            println!("subtasks score:\n{}", table.to_text());
            Ok(())
        }
    }
}

/// Parses argv and runs the requested command, returning the process exit
/// code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Embed(args) => match &args.command {
            EmbedCommand::Import { input, out, dim } => cmd_embed_import(input, out, *dim),
        },
        Command::Forge(args) => cmd_forge(args),
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Subtasks(args) => cmd_subtasks(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}
