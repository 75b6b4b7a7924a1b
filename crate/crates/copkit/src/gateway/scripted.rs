//! A deterministic, rule-based stand-in for a vision-language model.
//! The first matching rule wins; unmatched requests get `default_text`.
//! Token usage is synthesized from whitespace token counts so cost
//! properties are testable offline.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::util::whitespace_tokens;

use super::{GatewayError, ModelRequest, ModelResponse, Provider, Usage};

/// Default text for unmatched requests; deliberately unparseable so broken
/// fixtures fail loudly instead of silently scoring.
pub fn oracle_default_text() -> String {
    "unmatched scripted request".to_string()
}

/// One canned-response rule. All present conditions must hold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    /// Exact match on the full instruction text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_equals: Option<String>,
    /// Every listed needle must appear in the instruction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub instruction_contains: Vec<String>,
    /// The request must reference this image id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    /// Canned response text.
    pub text: String,
}

impl Rule {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }

    pub fn when_contains(mut self, needle: impl Into<String>) -> Self {
        self.instruction_contains.push(needle.into());
        self
    }

    pub fn when_image(mut self, image_id: impl Into<String>) -> Self {
        self.image_id = Some(image_id.into());
        self
    }

    pub fn when_equals(mut self, instruction: impl Into<String>) -> Self {
        self.instruction_equals = Some(instruction.into());
        self
    }

    fn matches(&self, request: &ModelRequest) -> bool {
        if let Some(exact) = &self.instruction_equals {
            if &request.instruction != exact {
                return false;
            }
        }
        if let Some(image) = &self.image_id {
            if !request.image_ids.iter().any(|id| id == image) {
                return false;
            }
        }
        self.instruction_contains
            .iter()
            .all(|needle| request.instruction.contains(needle))
    }
}

/// Deterministic scripted provider (test double for real VLMs).
pub struct ScriptedProvider {
    id: String,
    rules: Vec<Rule>,
    default_text: String,
    calls: AtomicU64,
}

impl ScriptedProvider {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            rules: Vec::new(),
            default_text: oracle_default_text(),
            calls: AtomicU64::new(0),
        }
    }

    pub fn with_rule(mut self, rule: Rule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = Rule>) -> Self {
        self.rules.extend(rules);
        self
    }

    pub fn with_default_text(mut self, text: impl Into<String>) -> Self {
        self.default_text = text.into();
        self
    }

    /// Number of completed (non-erroring) requests served so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for ScriptedProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        request.validate()?;
        let text = self
            .rules
            .iter()
            .find(|rule| rule.matches(request))
            .map(|rule| rule.text.clone())
            .unwrap_or_else(|| self.default_text.clone());
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(ModelResponse {
            usage: Usage::new(
                whitespace_tokens(&request.instruction),
                whitespace_tokens(&text),
            ),
            text,
            provider_id: self.id.clone(),
            cached: false,
        })
    }
}
