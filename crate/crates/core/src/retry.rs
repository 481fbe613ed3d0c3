//! Bounded exponential backoff shared by the remote embedding and chat clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Errors that may succeed when the same call is issued again.
pub trait Transient {
    fn is_transient(&self) -> bool;

    /// Server-suggested wait, when the error carries one.
    fn retry_after(&self) -> Option<Duration> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    /// A policy that retries without sleeping; for tests and scripted stubs.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            base_delay_ms: 0,
            max_delay_ms: 0,
            multiplier: 1.0,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let exp = self.multiplier.powi(retry.saturating_sub(1) as i32);
        let ms = (self.base_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_millis(ms as u64)
    }

    /// Runs `op` until it succeeds, fails permanently, or attempts run out.
    /// On success returns the value and the number of retries that were needed.
    pub fn run<T, E: Transient>(&self, mut op: impl FnMut() -> Result<T, E>) -> Result<(T, u32), E> {
        let attempts = self.max_attempts.max(1);
        let mut retries = 0;
        loop {
            match op() {
                Ok(v) => return Ok((v, retries)),
                Err(e) if e.is_transient() && retries + 1 < attempts => {
                    retries += 1;
                    let wait = e
                        .retry_after()
                        .map(|d| d.min(Duration::from_millis(self.max_delay_ms)))
                        .unwrap_or_else(|| self.delay(retries));
                    log::debug!("transient failure, retry {retries} in {wait:?}");
                    if !wait.is_zero() {
                        thread::sleep(wait);
                    }
                }
                Err(e) => return Err(e),
            }
        }
    }
}
