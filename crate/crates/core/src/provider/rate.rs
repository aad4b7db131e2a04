use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Clock, ProviderError};

pub const WINDOW: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateBudget {
    pub tokens_per_minute: u64,
    pub requests_per_minute: u64,
}

impl Default for RateBudget {
    fn default() -> Self {
        RateBudget {
            tokens_per_minute: 400_000,
            requests_per_minute: 50,
        }
    }
}

impl RateBudget {
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens_per_minute == 0 || self.requests_per_minute == 0 {
            return Err("rate budgets must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Wait(Duration),
}

/// Admissions of the last 60 seconds. An admission at time `t` counts
/// against every window `(now - 60s, now]` with `t > now - 60s`.
#[derive(Debug, Clone)]
pub struct RateWindow {
    budget: RateBudget,
    entries: VecDeque<(Duration, u64)>,
}

impl RateWindow {
    pub fn new(budget: RateBudget) -> Self {
        RateWindow {
            budget,
            entries: VecDeque::new(),
        }
    }

    pub fn budget(&self) -> RateBudget {
        self.budget
    }

    pub fn tokens_in_window(&self) -> u64 {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Admits the request and records it, or returns the shortest wait after
    /// which the same request would be admitted. `now` must not go backwards.
    pub fn admit(&mut self, request_tokens: u64, now: Duration) -> Result<Admission, ProviderError> {
        if request_tokens > self.budget.tokens_per_minute {
            return Err(ProviderError::Unadmittable {
                tokens: request_tokens,
                budget: self.budget.tokens_per_minute,
            });
        }
        while self.entries.front().is_some_and(|&(t, _)| t + WINDOW <= now) {
            self.entries.pop_front();
        }
        let mut tokens = self.tokens_in_window();
        let mut count = self.entries.len() as u64;
        let fits = |tokens: u64, count: u64| {
            tokens + request_tokens <= self.budget.tokens_per_minute
                && count < self.budget.requests_per_minute
        };
        if fits(tokens, count) {
            self.entries.push_back((now, request_tokens));
            return Ok(Admission::Admit);
        }
        for &(t, n) in &self.entries {
            tokens -= n;
            count -= 1;
            if fits(tokens, count) {
                return Ok(Admission::Wait(t + WINDOW - now));
            }
        }
        unreachable!("an empty window admits any request within the token budget")
    }
}

/// Shared, internally synchronised rate limiter.
#[derive(Debug)]
pub struct RateLimiter {
    window: Mutex<RateWindow>,
}

impl RateLimiter {
    pub fn new(budget: RateBudget) -> Self {
        RateLimiter {
            window: Mutex::new(RateWindow::new(budget)),
        }
    }

    /// Blocks (through `clock`) until the request is admitted.
    pub fn acquire(&self, request_tokens: u64, clock: &dyn Clock) -> Result<(), ProviderError> {
        loop {
            let decision = self
                .window
                .lock()
                .expect("rate window lock")
                .admit(request_tokens, clock.now())?;
            match decision {
                Admission::Admit => return Ok(()),
                Admission::Wait(d) => clock.sleep(d),
            }
        }
    }
}
