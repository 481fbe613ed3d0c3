//! OpenAI-compatible chat-completions provider.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpenAiConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    /// Sent as a bearer token when non-empty.
    #[serde(skip_serializing)]
    pub api_key: String,
    pub timeout_secs: u64,
}

impl Default for OpenAiConfig {
    fn default() -> Self {
        OpenAiConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key: String::new(),
            timeout_secs: 120,
        }
    }
}

pub struct OpenAiChatProvider {
    config: OpenAiConfig,
    agent: ureq::Agent,
}

impl OpenAiChatProvider {
    pub fn new(config: OpenAiConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        OpenAiChatProvider { config, agent }
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<Value>(body)
        .ok()
        .and_then(|v| {
            v.pointer("/error/message")
                .or_else(|| v.get("error"))
                .and_then(Value::as_str)
                .map(str::to_string)
        })
        .unwrap_or_else(|| body.chars().take(200).collect())
}

/// Maps a completed HTTP exchange to a response or a typed error.
pub(crate) fn interpret(status: u16, retry_after: Option<&str>, body: &str) -> Result<ChatResponse, LlmError> {
    match status {
        200..=299 => {}
        429 => {
            return Err(LlmError::RateLimited {
                retry_after: retry_after
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|s| s.is_finite() && *s >= 0.0)
                    .map(Duration::from_secs_f64),
            })
        }
        500..=599 => {
            return Err(LlmError::Server {
                status,
                message: error_message(body),
            })
        }
        _ => {
            return Err(LlmError::Rejected {
                status,
                message: error_message(body),
            })
        }
    }
    let v: Value = serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let choice = v
        .pointer("/choices/0")
        .ok_or_else(|| LlmError::Malformed("no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(LlmError::Refusal("content filter".into()));
    }
    let message = choice
        .get("message")
        .ok_or_else(|| LlmError::Malformed("choice without message".into()))?;
    let text = match message.get("content") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => {
            let why = message
                .get("refusal")
                .and_then(Value::as_str)
                .unwrap_or("empty content");
            return Err(LlmError::Refusal(why.to_string()));
        }
        Some(other) => return Err(LlmError::Malformed(format!("content is {other}"))),
    };
    let usage = |key: &str| v.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(ChatResponse {
        text,
        prompt_tokens: usage("prompt_tokens"),
        completion_tokens: usage("completion_tokens"),
    })
}

impl ChatProvider for OpenAiChatProvider {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, LlmError> {
        if req.user_text.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let body = json!({
            "model": req.model,
            "temperature": req.temperature,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": req.user_text},
            ],
        });
        let mut call = self.agent.post(&self.config.endpoint);
        if !self.config.api_key.is_empty() {
            call = call.header("Authorization", &format!("Bearer {}", self.config.api_key));
        }
        let mut resp = call.send_json(&body).map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|h| h.to_str().ok())
            .map(str::to_string);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        interpret(status, retry_after.as_deref(), &text)
    }
}
