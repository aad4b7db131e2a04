use std::collections::BTreeSet;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Clock, CompletionAdapter, ErrorClass, ModelRequest, ModelResponse, ProviderError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis")]
    pub initial_backoff: Duration,
    pub backoff_multiplier: f64,
    pub retryable: BTreeSet<ErrorClass>,
    /// Full jitter: each wait is drawn uniformly from `[0, backoff]`.
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            initial_backoff: Duration::from_secs(1),
            backoff_multiplier: 2.0,
            retryable: [ErrorClass::Timeout, ErrorClass::RateLimited, ErrorClass::ServerError]
                .into_iter()
                .collect(),
            jitter: false,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("retry.max_attempts must be at least 1".into());
        }
        if !(self.backoff_multiplier.is_finite() && self.backoff_multiplier >= 1.0) {
            return Err(format!(
                "retry.backoff_multiplier must be >= 1, got {}",
                self.backoff_multiplier
            ));
        }
        Ok(())
    }

    /// Un-jittered wait after failed attempt `attempt` (1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.backoff_multiplier.powi(attempt.saturating_sub(1) as i32);
        self.initial_backoff.mul_f64(factor.min(1e6))
    }

    fn is_retryable(&self, err: &ProviderError) -> bool {
        err.class().is_some_and(|c| self.retryable.contains(&c))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryOutcome {
    pub response: ModelResponse,
    pub attempts: u32,
}

/// Calls the adapter until it succeeds, a non-retryable error occurs, or
/// `max_attempts` calls have been made.
pub fn complete_with_retry(
    adapter: &dyn CompletionAdapter,
    request: &ModelRequest,
    policy: &RetryPolicy,
    clock: &dyn Clock,
) -> Result<RetryOutcome, ProviderError> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match adapter.complete(request) {
            Ok(response) => {
                return Ok(RetryOutcome {
                    response,
                    attempts: attempt,
                })
            }
            Err(err) if !policy.is_retryable(&err) => return Err(err),
            Err(err) if attempt >= policy.max_attempts => {
                return Err(ProviderError::RetriesExhausted {
                    attempts: attempt,
                    last: Box::new(err),
                })
            }
            Err(err) => {
                let mut wait = policy.backoff(attempt);
                if policy.jitter {
                    wait = wait.mul_f64(rand::thread_rng().gen_range(0.0..=1.0));
                }
                tracing::warn!(attempt, ?wait, error = %err, "retrying completion");
                clock.sleep(wait);
            }
        }
    }
}
