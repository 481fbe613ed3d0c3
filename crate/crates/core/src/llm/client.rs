//! Provider wrapper adding the response cache, retries and call limits.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    request_digest, ChatProvider, ChatRequest, ChatResponse, LlmError, RateLimiter, RateLimits, ResponseCache,
    Semaphore,
};
use crate::retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    pub retry: RetryPolicy,
    pub limits: RateLimits,
    /// Provider calls allowed in flight at once.
    pub max_in_flight: usize,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        LlmClientConfig {
            retry: RetryPolicy::default(),
            limits: RateLimits::default(),
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Completion {
    pub response: ChatResponse,
    /// Served from the cache; no provider call and no token cost.
    pub from_cache: bool,
    pub retries: u32,
    pub digest: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    /// Every attempt sent to the provider, retried ones included.
    pub provider_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

pub struct LlmClient {
    provider: Box<dyn ChatProvider>,
    cache: Arc<ResponseCache>,
    retry: RetryPolicy,
    limiter: RateLimiter,
    in_flight: Semaphore,
    provider_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
}

impl LlmClient {
    pub fn new(provider: impl ChatProvider + 'static, cache: Arc<ResponseCache>, config: LlmClientConfig) -> Self {
        LlmClient {
            provider: Box::new(provider),
            cache,
            retry: config.retry,
            limiter: RateLimiter::new(config.limits),
            in_flight: Semaphore::new(config.max_in_flight),
            provider_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            retries: AtomicU64::new(0),
        }
    }

    /// In-memory cache, no pauses between retries.
    pub fn uncached(provider: impl ChatProvider + 'static) -> Self {
        LlmClient::new(
            provider,
            Arc::new(ResponseCache::in_memory()),
            LlmClientConfig {
                retry: RetryPolicy::immediate(5),
                ..Default::default()
            },
        )
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            provider_calls: self.provider_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            retries: self.retries.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<Completion, LlmError> {
        let digest = request_digest(req);
        if let Some(response) = self.cache.get(&digest) {
            self.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(Completion {
                response,
                from_cache: true,
                retries: 0,
                digest,
            });
        }
        let estimate = ((req.system_text.len() + req.user_text.len()) / 4) as u64;
        let outcome = self.retry.run(|| {
            self.limiter.acquire(estimate);
            let _permit = self.in_flight.acquire();
            self.provider_calls.fetch_add(1, Ordering::Relaxed);
            self.provider.complete(req)
        });
        let (response, retries) = outcome?;
        self.retries.fetch_add(retries as u64, Ordering::Relaxed);
        self.cache.insert(&digest, &response)?;
        Ok(Completion {
            response,
            from_cache: false,
            retries,
            digest,
        })
    }
}
