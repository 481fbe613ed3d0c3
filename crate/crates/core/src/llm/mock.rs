//! Deterministic scripted provider.
//!
//! A script is a JSON document:
//!
//! ```json
//! {
//!   "rules": [
//!     { "stage": "stage1",
//!       "lines": ["Query concept: hypokalemia", "Candidate concept: low potassium"],
//!       "replies": [{"text": "Answer: yes"}] },
//!     { "stage": "stage2",
//!       "patterns": ["(?m)^Query concept: hypokalemia$"],
//!       "replies": [{"select": "low potassium"}, {"text": "Choice: NIL"}] }
//!   ],
//!   "defaults": { "stage1": [{"text": "Answer: no"}], "stage2": [{"text": "Choice: NIL"}] },
//!   "usage": { "prompt_base": 40, "prompt_per_line": 6, "completion": 4 }
//! }
//! ```
//!
//! The first rule whose `stage`, `lines` (exact, trimmed lines of the user
//! text) and `patterns` (regexes over the user text) all match picks the reply
//! list; otherwise the stage default applies. Within a list the reply is chosen
//! by `sample_index` modulo its length, so outcomes do not depend on call
//! order or thread scheduling.
//!
//! A reply carries `text`, or `select` (answer `Choice: i` for the numbered
//! candidate line whose name equals `select`, `Choice: NIL` when absent), or
//! `error`. `fail_first` makes the first attempts of that exact request fail
//! with a transient error before the reply is served.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{request_digest, ChatProvider, ChatRequest, ChatResponse, LlmError, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockError {
    Transport,
    RateLimited,
    Server,
    Refusal,
    Rejected,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockReply {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub select: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<MockError>,
    #[serde(skip_serializing_if = "is_zero")]
    pub fail_first: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl MockReply {
    pub fn text(text: impl Into<String>) -> Self {
        MockReply {
            text: Some(text.into()),
            ..Default::default()
        }
    }

    pub fn select(name: impl Into<String>) -> Self {
        MockReply {
            select: Some(name.into()),
            ..Default::default()
        }
    }

    pub fn with_tokens(mut self, prompt: u64, completion: u64) -> Self {
        self.prompt_tokens = Some(prompt);
        self.completion_tokens = Some(completion);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRule {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub lines: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub patterns: Vec<String>,
    pub replies: Vec<MockReply>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockDefaults {
    pub stage1: Vec<MockReply>,
    pub stage2: Vec<MockReply>,
}

impl Default for MockDefaults {
    fn default() -> Self {
        MockDefaults {
            stage1: vec![MockReply::text("Answer: no")],
            stage2: vec![MockReply::text("Choice: NIL")],
        }
    }
}

/// Token counts for replies that do not script their own:
/// `prompt = prompt_base + prompt_per_line * lines(system + user)`,
/// `completion = completion`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageModel {
    pub prompt_base: u64,
    pub prompt_per_line: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    pub defaults: MockDefaults,
    /// When absent, tokens are counted as whitespace-separated words.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub usage: Option<UsageModel>,
}

impl MockScript {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| LlmError::Storage {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("script serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| LlmError::Storage {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

struct CompiledRule {
    stage: Option<Stage>,
    lines: Vec<String>,
    patterns: Vec<Regex>,
    replies: Vec<MockReply>,
}

pub struct MockProvider {
    rules: Vec<CompiledRule>,
    /// Rules with `lines`, keyed by their first line.
    by_line: HashMap<String, Vec<usize>>,
    /// Rules without `lines`; always tested.
    unindexed: Vec<usize>,
    defaults: MockDefaults,
    usage: Option<UsageModel>,
    calls: AtomicU64,
    attempts: Mutex<HashMap<String, u32>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Result<Self, LlmError> {
        let mut rules = Vec::with_capacity(script.rules.len());
        let mut by_line: HashMap<String, Vec<usize>> = HashMap::new();
        let mut unindexed = Vec::new();
        for (i, r) in script.rules.into_iter().enumerate() {
            if r.replies.is_empty() {
                return Err(LlmError::Script(format!("rule {i} has no replies")));
            }
            let patterns = r
                .patterns
                .iter()
                .map(|p| Regex::new(p).map_err(|e| LlmError::Script(format!("rule {i}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let lines: Vec<String> = r.lines.iter().map(|l| l.trim().to_string()).collect();
            match lines.first() {
                Some(first) => by_line.entry(first.clone()).or_default().push(i),
                None => unindexed.push(i),
            }
            rules.push(CompiledRule {
                stage: r.stage,
                lines,
                patterns,
                replies: r.replies,
            });
        }
        if script.defaults.stage1.is_empty() || script.defaults.stage2.is_empty() {
            return Err(LlmError::Script("stage defaults must not be empty".into()));
        }
        Ok(MockProvider {
            rules,
            by_line,
            unindexed,
            defaults: script.defaults,
            usage: script.usage,
            calls: AtomicU64::new(0),
            attempts: Mutex::new(HashMap::new()),
        })
    }

    /// A provider that answers every prompt with the stage defaults.
    pub fn with_defaults(stage1: MockReply, stage2: MockReply) -> Self {
        MockProvider::new(MockScript {
            defaults: MockDefaults {
                stage1: vec![stage1],
                stage2: vec![stage2],
            },
            ..Default::default()
        })
        .expect("valid script")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        MockProvider::new(MockScript::load(path)?)
    }

    /// Number of `complete` calls served so far, failed ones included.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn replies_for(&self, req: &ChatRequest) -> &[MockReply] {
        let lines: HashSet<&str> = req.user_text.lines().map(str::trim).collect();
        let mut candidates: Vec<usize> = lines
            .iter()
            .filter_map(|l| self.by_line.get(*l))
            .flatten()
            .copied()
            .chain(self.unindexed.iter().copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        for i in candidates {
            let rule = &self.rules[i];
            if rule.stage.is_some_and(|s| s != req.stage) {
                continue;
            }
            if !rule.lines.iter().all(|l| lines.contains(l.as_str())) {
                continue;
            }
            if !rule.patterns.iter().all(|p| p.is_match(&req.user_text)) {
                continue;
            }
            return &rule.replies;
        }
        match req.stage {
            Stage::Stage1 => &self.defaults.stage1,
            Stage::Stage2 => &self.defaults.stage2,
        }
    }

    fn usage_for(&self, req: &ChatRequest, reply: &MockReply, text: &str) -> (u64, u64) {
        let (p, c) = match self.usage {
            Some(m) => {
                let lines = (req.system_text.lines().count() + req.user_text.lines().count()) as u64;
                (m.prompt_base + m.prompt_per_line * lines, m.completion)
            }
            None => {
                let words = |s: &str| s.split_whitespace().count() as u64;
                (words(&req.system_text) + words(&req.user_text), words(text))
            }
        };
        (reply.prompt_tokens.unwrap_or(p), reply.completion_tokens.unwrap_or(c))
    }
}

/// Finds `name` among numbered `i. name` lines.
fn select_index(user_text: &str, name: &str) -> Option<usize> {
    user_text.lines().find_map(|line| {
        let (num, rest) = line.trim().split_once(". ")?;
        let i: usize = num.parse().ok()?;
        (rest.trim() == name.trim()).then_some(i)
    })
}

impl ChatProvider for MockProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        if req.user_text.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let replies = self.replies_for(req);
        let reply = &replies[req.sample_index as usize % replies.len()];

        if reply.fail_first > 0 {
            let mut attempts = self.attempts.lock().unwrap();
            let seen = attempts.entry(request_digest(req)).or_insert(0);
            *seen += 1;
            if *seen <= reply.fail_first {
                return Err(LlmError::RateLimited {
                    retry_after: Some(Duration::ZERO),
                });
            }
        }
        if let Some(err) = reply.error {
            return Err(match err {
                MockError::Transport => LlmError::Transport("scripted transport failure".into()),
                MockError::RateLimited => LlmError::RateLimited { retry_after: None },
                MockError::Server => LlmError::Server {
                    status: 500,
                    message: "scripted server error".into(),
                },
                MockError::Refusal => LlmError::Refusal("scripted refusal".into()),
                MockError::Rejected => LlmError::Rejected {
                    status: 400,
                    message: "scripted rejection".into(),
                },
            });
        }
        let text = match (&reply.text, &reply.select) {
            (Some(t), _) => t.clone(),
            (None, Some(name)) => match select_index(&req.user_text, name) {
                Some(i) => format!("Choice: {i}"),
                None => "Choice: NIL".to_string(),
            },
            (None, None) => String::new(),
        };
        let (prompt_tokens, completion_tokens) = self.usage_for(req, reply, &text);
        Ok(ChatResponse {
            text,
            prompt_tokens,
            completion_tokens,
        })
    }
}
