//! Chat-completion plumbing: provider boundary, answer parsing, response
//! cache, rate limiting and token/cost accounting.
//!
//! Every prompt is a single-shot exchange (one system message, one user
//! message). Providers implement [`ChatProvider`]; [`LlmClient`] layers the
//! cache, retries and concurrency limits on top of any provider.

mod cache;
mod client;
mod ledger;
mod limit;
mod mock;
mod parse;
mod prompt;
mod remote;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::retry::Transient;

pub use cache::{request_digest, ResponseCache};
pub use client::{ClientStats, Completion, LlmClient, LlmClientConfig};
pub use ledger::{
    ledger_report, read_ledger, write_ledger, CostReport, LedgerEntry, Price, PriceTable, StageCost, UsageLedger,
};
pub use limit::{RateLimiter, RateLimits, RateWindow, Semaphore};
pub use mock::{MockError, MockProvider, MockReply, MockRule, MockScript, UsageModel};
pub use parse::{parse_stage1, parse_stage2, Selection, Verdict};
pub use prompt::PromptTemplates;
pub use remote::{OpenAiChatProvider, OpenAiConfig};

/// Which prompt of the two-stage protocol a request belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Pairwise "should these be linked?" prompt.
    Stage1,
    /// Listwise selection over the retained candidates, with NIL.
    Stage2,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    /// Distinguishes the self-consistency repeats of one prompt.
    pub sample_index: u32,
    /// Routing and accounting tag; not part of the cache key.
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited (429)")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("provider rejected request ({status}): {message}")]
    Rejected { status: u16, message: String },
    #[error("provider refused to answer: {0}")]
    Refusal(String),
    #[error("malformed provider payload: {0}")]
    Malformed(String),
    #[error("empty user text")]
    EmptyPrompt,
    #[error("mock script: {0}")]
    Script(String),
    #[error("{path}: {message}")]
    Storage { path: String, message: String },
    #[error("no price for model `{0}`")]
    UnknownModel(String),
}

impl Transient for LlmError {
    fn is_transient(&self) -> bool {
        matches!(
            self,
            LlmError::Transport(_) | LlmError::RateLimited { .. } | LlmError::Server { .. }
        )
    }

    fn retry_after(&self) -> Option<Duration> {
        match self {
            LlmError::RateLimited { retry_after } => *retry_after,
            _ => None,
        }
    }
}

/// A chat-completion backend.
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}
