//! Named prompt templates. The builtin set ships as plain-text files under
//! `templates/` so runs can be reproduced byte-for-byte; a directory of
//! `*.txt` files can override any template by name.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::util::sha256_hex;

pub const BASELINE: &str = "baseline";
pub const BASELINE_ZERO_SHOT: &str = "baseline_zero_shot";
pub const PHASE1_RETRIEVE: &str = "phase1_retrieve";
pub const PHASE1_SCORE: &str = "phase1_score";
pub const PHASE2_DECOMPOSE: &str = "phase2_decompose";
pub const PHASE3_IDENTIFY: &str = "phase3_identify";
pub const SUBTASK_CSI: &str = "subtask_csi";
pub const SUBTASK_NSP: &str = "subtask_nsp";
pub const SUBTASK_SIV: &str = "subtask_siv";
pub const SUBTASK_DPA: &str = "subtask_dpa";
pub const SUBTASK_CPM: &str = "subtask_cpm";
pub const JUDGE_RUBRIC: &str = "judge_rubric";

const BUILTIN: [(&str, &str); 12] = [
    (BASELINE, include_str!("../templates/baseline.txt")),
    (
        BASELINE_ZERO_SHOT,
        include_str!("../templates/baseline_zero_shot.txt"),
    ),
    (
        PHASE1_RETRIEVE,
        include_str!("../templates/phase1_retrieve.txt"),
    ),
    (PHASE1_SCORE, include_str!("../templates/phase1_score.txt")),
    (
        PHASE2_DECOMPOSE,
        include_str!("../templates/phase2_decompose.txt"),
    ),
    (
        PHASE3_IDENTIFY,
        include_str!("../templates/phase3_identify.txt"),
    ),
    (SUBTASK_CSI, include_str!("../templates/subtask_csi.txt")),
    (SUBTASK_NSP, include_str!("../templates/subtask_nsp.txt")),
    (SUBTASK_SIV, include_str!("../templates/subtask_siv.txt")),
    (SUBTASK_DPA, include_str!("../templates/subtask_dpa.txt")),
    (SUBTASK_CPM, include_str!("../templates/subtask_cpm.txt")),
    (JUDGE_RUBRIC, include_str!("../templates/judge_rubric.txt")),
];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("unknown template {0:?}")]
    Unknown(String),
    #[error("failed to read template directory {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        let templates = BUILTIN
            .iter()
            .map(|(name, text)| (name.to_string(), text.to_string()))
            .collect();
        Self { templates }
    }

    /// Builtin set with any `<name>.txt` found in `dir` overriding the
    /// builtin text of the same name.
    pub fn with_overrides_from(dir: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        let entries = std::fs::read_dir(dir).map_err(|err| TemplateError::Io {
            path: dir.display().to_string(),
            message: err.to_string(),
        })?;
        for entry in entries {
            let entry = entry.map_err(|err| TemplateError::Io {
                path: dir.display().to_string(),
                message: err.to_string(),
            })?;
            let path = entry.path();
            if path.extension().is_some_and(|ext| ext == "txt") {
                let name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string();
                let text = std::fs::read_to_string(&path).map_err(|err| TemplateError::Io {
                    path: path.display().to_string(),
                    message: err.to_string(),
                })?;
                set.templates.insert(name, text);
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: &str) -> Result<&str, TemplateError> {
        self.templates
            .get(name)
            .map(|s| s.as_str())
            .ok_or_else(|| TemplateError::Unknown(name.to_string()))
    }

    /// Renders a template by replacing `{KEY}` placeholders.
    pub fn render(&self, name: &str, fills: &[(&str, &str)]) -> Result<String, TemplateError> {
        let mut text = self.get(name)?.to_string();
        for (key, value) in fills {
            text = text.replace(&format!("{{{key}}}"), value);
        }
        Ok(text)
    }

    /// Stable hash over every (name, content) pair, for run manifests.
    pub fn content_hash(&self) -> String {
        let mut material = Vec::new();
        for (name, text) in &self.templates {
            material.extend_from_slice(name.as_bytes());
            material.push(0);
            material.extend_from_slice(text.as_bytes());
            material.push(0);
        }
        sha256_hex(&material)
    }
}
