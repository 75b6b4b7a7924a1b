//! Provider-agnostic access to vision-language models: a synchronous
//! [`Provider`] contract, a deterministic scripted provider for tests, an
//! HTTP-backed provider, content-addressed response caching, token budgets,
//! an in-flight limiter, and token-cost accounting.
//!
//! Downstream modules see a synchronous call contract; batch parallelism
//! lives in [`run_batch`].

mod cache;
mod http;
mod scripted;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{with_cache, CachedProvider};
pub use http::{HttpProvider, HttpProviderConfig};
pub use scripted::{oracle_default_text, Rule, ScriptedProvider};

use crate::util::whitespace_tokens;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider refused the request: {0}")]
    ProviderRefusal(String),
    #[error("token budget exceeded: spent {spent} + pending {pending} > ceiling {ceiling}")]
    BudgetExceeded {
        spent: u64,
        pending: u64,
        ceiling: u64,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache i/o error at {path}: {message}")]
    CacheIo { path: PathBuf, message: String },
    #[error("missing credentials: environment variable {0} is not set")]
    MissingCredentials(String),
}

impl GatewayError {
    /// Short machine-readable class tag for error reports.
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::Transport { .. } => "transport",
            GatewayError::ProviderRefusal(_) => "provider_refusal",
            GatewayError::BudgetExceeded { .. } => "budget_exceeded",
            GatewayError::InvalidRequest(_) => "invalid_request",
            GatewayError::CacheIo { .. } => "cache_io",
            GatewayError::MissingCredentials(_) => "missing_credentials",
        }
    }
}

/// Decoding controls. Temperature defaults to 0 for reproducibility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
        }
    }
}

/// A provider-agnostic prompt + image exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub instruction: String,
    #[serde(default)]
    pub image_ids: Vec<String>,
    #[serde(default)]
    pub decoding: Decoding,
}

impl ModelRequest {
    pub fn text(instruction: impl Into<String>) -> Self {
        Self {
            instruction: instruction.into(),
            image_ids: Vec::new(),
            decoding: Decoding::default(),
        }
    }

    pub fn with_image(mut self, image_id: impl Into<String>) -> Self {
        self.image_ids.push(image_id.into());
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.instruction.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "instruction must be non-empty".into(),
            ));
        }
        // NaN fails this check too.
        if !(self.decoding.temperature.is_finite() && self.decoding.temperature >= 0.0) {
            return Err(GatewayError::InvalidRequest(
                "temperature must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Usage,
    pub provider_id: String,
    pub cached: bool,
}

/// Synchronous, shareable model access. Implementations must be safe to call
/// from concurrent tasks.
pub trait Provider: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        (**self).complete(request)
    }
}

/// Enforces a total token ceiling across all requests routed through it.
/// The pending request's cost is estimated from whitespace tokens and
/// checked BEFORE dispatch; actual usage is charged after completion.
pub struct BudgetedProvider {
    inner: Arc<dyn Provider>,
    ceiling: u64,
    spent: AtomicU64,
}

impl BudgetedProvider {
    pub fn new(inner: Arc<dyn Provider>, ceiling: u64) -> Self {
        Self {
            inner,
            ceiling,
            spent: AtomicU64::new(0),
        }
    }

    pub fn spent(&self) -> u64 {
        self.spent.load(Ordering::SeqCst)
    }
}

impl Provider for BudgetedProvider {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let pending = whitespace_tokens(&request.instruction);
        let spent = self.spent.load(Ordering::SeqCst);
        if spent + pending > self.ceiling {
            return Err(GatewayError::BudgetExceeded {
                spent,
                pending,
                ceiling: self.ceiling,
            });
        }
        let response = self.inner.complete(request)?;
        self.spent
            .fetch_add(response.usage.total(), Ordering::SeqCst);
        Ok(response)
    }
}

/// Bounds the number of in-flight requests to the wrapped provider.
pub struct InFlightLimited {
    inner: Arc<dyn Provider>,
    max_in_flight: usize,
    state: Mutex<usize>,
    available: Condvar,
}

impl InFlightLimited {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn new(inner: Arc<dyn Provider>, max_in_flight: usize) -> Self {
        Self {
            inner,
            max_in_flight: max_in_flight.max(1),
            state: Mutex::new(0),
            available: Condvar::new(),
        }
    }
}

impl Provider for InFlightLimited {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        {
            let mut in_flight = self.state.lock().expect("limiter lock");
            while *in_flight >= self.max_in_flight {
                in_flight = self.available.wait(in_flight).expect("limiter wait");
            }
            *in_flight += 1;
        }
        let result = self.inner.complete(request);
        {
            let mut in_flight = self.state.lock().expect("limiter lock");
            *in_flight -= 1;
        }
        self.available.notify_one();
        result
    }
}

/// Runs `f` over `items` with up to `workers` threads, returning results in
/// input order. With deterministic `f`, output is identical to serial
/// execution.
pub fn run_batch<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let result = f(i, &items[i]);
                *slots[i].lock().expect("result slot") = Some(result);
            });
        }
    });
    slots
        .into_iter()
        .map(|slot| slot.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}

/// Per-phase request and token counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseUsage {
    pub requests: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl PhaseUsage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

/// Token usage for one pipeline run, broken down by phase label.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    pub per_phase: BTreeMap<String, PhaseUsage>,
}

impl TokenLedger {
    pub fn record(&mut self, phase: &str, usage: Usage) {
        let entry = self.per_phase.entry(phase.to_string()).or_default();
        entry.requests += 1;
        entry.input_tokens += usage.input_tokens;
        entry.output_tokens += usage.output_tokens;
    }

    pub fn requests(&self) -> u64 {
        self.per_phase.values().map(|p| p.requests).sum()
    }

    pub fn input_tokens(&self) -> u64 {
        self.per_phase.values().map(|p| p.input_tokens).sum()
    }

    pub fn output_tokens(&self) -> u64 {
        self.per_phase.values().map(|p| p.output_tokens).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.input_tokens() + self.output_tokens()
    }
}

/// Aggregated token accounting over a set of per-instance ledgers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub instances: usize,
    pub total_requests: u64,
    pub total_input_tokens: u64,
    pub total_output_tokens: u64,
    pub total_tokens: u64,
    pub per_instance_mean_tokens: f64,
    pub per_phase: BTreeMap<String, PhaseUsage>,
}

/// Aggregates token counts overall and per pipeline phase. Empty input
/// yields all-zero totals.
pub fn usage_report<'a>(ledgers: impl IntoIterator<Item = &'a TokenLedger>) -> UsageReport {
    let mut report = UsageReport::default();
    for ledger in ledgers {
        report.instances += 1;
        for (phase, usage) in &ledger.per_phase {
            let entry = report.per_phase.entry(phase.clone()).or_default();
            entry.requests += usage.requests;
            entry.input_tokens += usage.input_tokens;
            entry.output_tokens += usage.output_tokens;
        }
    }
    report.total_requests = report.per_phase.values().map(|p| p.requests).sum();
    report.total_input_tokens = report.per_phase.values().map(|p| p.input_tokens).sum();
    report.total_output_tokens = report.per_phase.values().map(|p| p.output_tokens).sum();
    report.total_tokens = report.total_input_tokens + report.total_output_tokens;
    if report.instances > 0 {
        report.per_instance_mean_tokens = report.total_tokens as f64 / report.instances as f64;
    }
    report
}
