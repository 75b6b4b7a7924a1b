//! Append-only per-instance execution trace: every request/response pair,
//! warnings, selected artifacts, and the token ledger. Replaying a trace's
//! requests against the same scripted provider reproduces the prediction.

use serde::{Deserialize, Serialize};

use crate::gateway::{GatewayError, ModelRequest, Provider, TokenLedger};

// Cache hits and misses are deliberately NOT recorded here: replayed
// responses are byte-identical, and recording transport state would make
// traces depend on thread timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub phase: String,
    pub instruction: String,
    pub image_ids: Vec<String>,
    pub response: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceArtifacts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_candidate: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_procedure_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase1_scores: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposed_steps: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition_map: Option<Vec<u32>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub working_current_step: Option<u32>,
}

/// Mutable trace under construction; frozen into a [`PhaseTrace`].
#[derive(Debug, Default)]
pub struct TraceState {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<String>,
    pub artifacts: TraceArtifacts,
    pub tokens: TokenLedger,
}

impl TraceState {
    /// Issues a request, recording it (and its usage) under `phase`.
    pub fn issue(
        &mut self,
        provider: &dyn Provider,
        phase: &str,
        instruction: &str,
        image_ids: &[&str],
    ) -> Result<String, GatewayError> {
        let mut request = ModelRequest::text(instruction);
        for image in image_ids {
            request = request.with_image(*image);
        }
        let response = provider.complete(&request)?;
        self.tokens.record(phase, response.usage);
        self.records.push(TraceRecord {
            phase: phase.to_string(),
            instruction: instruction.to_string(),
            image_ids: image_ids.iter().map(|s| s.to_string()).collect(),
            response: response.text.clone(),
            input_tokens: response.usage.input_tokens,
            output_tokens: response.usage.output_tokens,
        });
        Ok(response.text)
    }

    pub fn warn(&mut self, message: String) {
        self.warnings.push(message);
    }

    pub fn freeze(self) -> (PhaseTrace, TokenLedger) {
        (
            PhaseTrace {
                records: self.records,
                warnings: self.warnings,
                artifacts: self.artifacts,
            },
            self.tokens,
        )
    }
}

/// Immutable, serializable execution trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub records: Vec<TraceRecord>,
    pub warnings: Vec<String>,
    pub artifacts: TraceArtifacts,
}

impl PhaseTrace {
    /// Re-issues every recorded request against `provider`, returning the
    /// responses. With the original scripted provider the responses match
    /// the recorded ones byte for byte.
    pub fn replay(&self, provider: &dyn Provider) -> Result<Vec<String>, GatewayError> {
        let mut responses = Vec::with_capacity(self.records.len());
        for record in &self.records {
            let mut request = ModelRequest::text(&record.instruction);
            for image in &record.image_ids {
                request = request.with_image(image.clone());
            }
            responses.push(provider.complete(&request)?.text);
        }
        Ok(responses)
    }
}
