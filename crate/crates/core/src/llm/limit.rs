//! Concurrency bound and per-minute rate limits for provider calls.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Counting semaphore bounding the number of in-flight provider calls.
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap();
        while *n == 0 {
            n = self.freed.wait(n).unwrap();
        }
        *n -= 1;
        Permit { sem: self }
    }

    pub fn available(&self) -> usize {
        *self.permits.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimits {
    pub requests_per_minute: Option<u32>,
    pub tokens_per_minute: Option<u64>,
}

/// Sliding one-minute window of admitted requests.
#[derive(Debug, Default)]
pub struct RateWindow {
    limits: RateLimits,
    admitted: VecDeque<(Instant, u64)>,
    tokens: u64,
}

const WINDOW: Duration = Duration::from_secs(60);

impl RateWindow {
    pub fn new(limits: RateLimits) -> Self {
        RateWindow {
            limits,
            ..Default::default()
        }
    }

    /// Admits a request of `tokens` estimated tokens at `now`, or returns how
    /// long to wait before trying again. A request larger than the whole token
    /// budget is admitted once the window is empty.
    pub fn admit(&mut self, now: Instant, tokens: u64) -> Result<(), Duration> {
        while let Some(&(t, n)) = self.admitted.front() {
            if now.duration_since(t) >= WINDOW {
                self.admitted.pop_front();
                self.tokens -= n;
            } else {
                break;
            }
        }
        let requests_ok = self
            .limits
            .requests_per_minute
            .is_none_or(|rpm| self.admitted.len() < rpm as usize);
        let tokens_ok = self
            .limits
            .tokens_per_minute
            .is_none_or(|tpm| self.admitted.is_empty() || self.tokens + tokens <= tpm);
        if requests_ok && tokens_ok {
            self.admitted.push_back((now, tokens));
            self.tokens += tokens;
            return Ok(());
        }
        let oldest = self.admitted.front().expect("a full window is not empty").0;
        Err((oldest + WINDOW).saturating_duration_since(now))
    }
}

pub struct RateLimiter {
    window: Mutex<RateWindow>,
}

impl RateLimiter {
    pub fn new(limits: RateLimits) -> Self {
        RateLimiter {
            window: Mutex::new(RateWindow::new(limits)),
        }
    }

    pub fn unlimited() -> Self {
        RateLimiter::new(RateLimits::default())
    }

    /// Blocks until a request of `tokens` estimated tokens fits the limits.
    pub fn acquire(&self, tokens: u64) {
        loop {
            let wait = match self.window.lock().unwrap().admit(Instant::now(), tokens) {
                Ok(()) => return,
                Err(wait) => wait,
            };
            log::debug!("rate limit reached, waiting {wait:?}");
            thread::sleep(wait.max(Duration::from_millis(1)));
        }
    }
}
