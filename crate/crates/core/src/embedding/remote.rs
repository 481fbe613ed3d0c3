//! HTTP client for a remote embedding provider.
//!
//! Wire format: `POST {"inputs": [...]}` answered by `{"vectors": [[...]]}`;
//! a non-2xx reply carries `{"error": "..."}`. Providers must mean-pool the
//! token-level embeddings of multi-token names into one vector per input.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EmbeddingError;
use crate::retry::{RetryPolicy, Transient};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingClientConfig {
    pub endpoint: String,
    /// Inputs per request.
    pub batch_size: usize,
    /// Requests allowed in flight at once.
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for EmbeddingClientConfig {
    fn default() -> Self {
        EmbeddingClientConfig {
            endpoint: "http://127.0.0.1:8080/embed".into(),
            batch_size: 64,
            max_in_flight: 4,
            timeout_secs: 60,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    inputs: &'a [String],
}

#[derive(Deserialize)]
struct EmbedReply {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ErrorReply {
    error: String,
}

#[derive(Debug)]
enum Attempt {
    Transient(String),
    Fatal(EmbeddingError),
}

impl Transient for Attempt {
    fn is_transient(&self) -> bool {
        matches!(self, Attempt::Transient(_))
    }
}

pub struct EmbeddingClient {
    config: EmbeddingClientConfig,
    agent: ureq::Agent,
    dim: Mutex<Option<usize>>,
    retries: AtomicU32,
}

impl EmbeddingClient {
    pub fn new(config: EmbeddingClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        EmbeddingClient {
            config,
            agent,
            dim: Mutex::new(None),
            retries: AtomicU32::new(0),
        }
    }

    /// Retries performed so far across all calls.
    pub fn retries(&self) -> u32 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Embeds one batch. Vectors come back in input order and must share the
    /// dimension of every earlier batch from this client.
    pub fn fetch(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        if batch.is_empty() {
            return Err(EmbeddingError::Provider("empty batch".into()));
        }
        let (vectors, retries) = self.config.retry.run(|| self.attempt(batch)).map_err(|e| match e {
            Attempt::Transient(msg) => EmbeddingError::Transport(msg),
            Attempt::Fatal(e) => e,
        })?;
        self.retries.fetch_add(retries, Ordering::Relaxed);

        if vectors.len() != batch.len() {
            return Err(EmbeddingError::Arity {
                expected: batch.len(),
                got: vectors.len(),
            });
        }
        let width = vectors[0].len();
        if width == 0 {
            return Err(EmbeddingError::Empty);
        }
        if let Some(v) = vectors.iter().find(|v| v.len() != width) {
            return Err(EmbeddingError::Dimension {
                expected: width,
                found: v.len(),
            });
        }
        let mut dim = self.dim.lock().unwrap();
        match *dim {
            Some(d) if d != width => {
                return Err(EmbeddingError::Dimension {
                    expected: d,
                    found: width,
                })
            }
            _ => *dim = Some(width),
        }
        Ok(vectors)
    }

    fn attempt(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        let mut resp = self
            .agent
            .post(&self.config.endpoint)
            .send_json(EmbedRequest { inputs: batch })
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        if (200..300).contains(&status) {
            let reply: EmbedReply = serde_json::from_str(&body)
                .map_err(|e| Attempt::Fatal(EmbeddingError::Provider(format!("malformed reply: {e}"))))?;
            return Ok(reply.vectors);
        }
        let msg = serde_json::from_str::<ErrorReply>(&body)
            .map(|r| r.error)
            .unwrap_or(body);
        if status == 429 || status >= 500 {
            Err(Attempt::Transient(format!("status {status}: {msg}")))
        } else {
            Err(Attempt::Fatal(EmbeddingError::Provider(format!(
                "status {status}: {msg}"
            ))))
        }
    }

    /// Embeds every name, batching and keeping at most `max_in_flight`
    /// requests open. Output order follows `names`.
    pub fn fetch_all(&self, names: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let batches: Vec<&[String]> = names.chunks(self.config.batch_size.max(1)).collect();
        let workers = self.config.max_in_flight.max(1).min(batches.len().max(1));
        let next = AtomicU32::new(0);
        let results: Mutex<Vec<Option<Result<Vec<Vec<f64>>, EmbeddingError>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed) as usize;
                    let Some(batch) = batches.get(i) else { break };
                    let r = self.fetch(batch);
                    let failed = r.is_err();
                    results.lock().unwrap()[i] = Some(r);
                    if failed {
                        break;
                    }
                });
            }
        });
        // Unfilled slots only exist when some batch failed.
        let results = results.into_inner().unwrap();
        let mut out = Vec::with_capacity(names.len());
        let mut first_err = None;
        for r in results.into_iter().flatten() {
            match r {
                Ok(vs) => out.extend(vs),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }
}

/// One-shot convenience wrapper around [`EmbeddingClient::fetch`].
pub fn fetch_embeddings(endpoint: &str, batch: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
    EmbeddingClient::new(EmbeddingClientConfig {
        endpoint: endpoint.to_string(),
        ..Default::default()
    })
    .fetch(batch)
}
