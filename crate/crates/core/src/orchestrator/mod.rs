//! The two-stage linking pipeline.
//!
//! For each query: retrieve the `k` most similar targets, ask a pairwise
//! yes/no question `n` times per candidate, drop zero-belief candidates when
//! some candidate is believed strongly enough, ask a listwise
//! select-or-dismiss question `n` times over what is left, and take the vote.

mod linker;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use linker::{read_decisions, write_decisions, BatchOutput, Failure, Linker, RunManifest};
pub use rules::{decide, decide_by_belief, filter_candidates, Ruling};

/// Which parts of the pipeline run; one per ablation row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pairwise check, filtering, then listwise selection.
    #[default]
    TwoStage,
    /// Pairwise check only; the highest-belief candidate wins, never NIL.
    Stage1Only,
    /// Listwise selection over every retrieved candidate.
    Stage2Only,
    /// Embedding top-1.
    NoLlm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::TwoStage, Mode::Stage1Only, Mode::Stage2Only, Mode::NoLlm];

    pub fn label(self) -> &'static str {
        match self {
            Mode::TwoStage => "Two-stage Prompts",
            Mode::Stage1Only => "First-stage Prompt",
            Mode::Stage2Only => "Second-stage Prompt",
            Mode::NoLlm => "Before Prompting",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::TwoStage => "two_stage",
            Mode::Stage1Only => "stage1_only",
            Mode::Stage2Only => "stage2_only",
            Mode::NoLlm => "no_llm",
        }
    }

    pub fn uses_stage1(self) -> bool {
        matches!(self, Mode::TwoStage | Mode::Stage1Only)
    }

    pub fn uses_stage2(self) -> bool {
        matches!(self, Mode::TwoStage | Mode::Stage2Only)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid pipeline config: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Candidates retrieved per query.
    pub k: usize,
    /// Samples per prompt.
    pub n: u32,
    /// Belief level (share of "yes" answers) that enables filtering.
    pub tau: f64,
    /// NIL wins when its vote share is strictly above this.
    pub nil_majority: f64,
    pub temperature: f64,
    pub model: String,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 10,
            n: 5,
            tau: 0.8,
            nil_majority: 0.5,
            temperature: 0.7,
            model: "gpt-4".into(),
            mode: Mode::TwoStage,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.k == 0 {
            return fail("k must be at least 1".into());
        }
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return fail(format!("tau must be in (0, 1], got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.nil_majority) {
            return fail(format!("nil_majority must be in [0, 1), got {}", self.nil_majority));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return fail(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.model.trim().is_empty() {
            return fail("model name is empty".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
