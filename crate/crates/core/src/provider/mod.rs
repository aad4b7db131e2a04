//! Provider-neutral completion contract and its adapters.

mod cassette;
mod clock;
mod live;
mod rate;
mod retry;

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cassette::{CassetteEntry, CassetteStore, RecordingAdapter, ReplayAdapter};
pub use clock::{Clock, ManualClock, SystemClock};
pub use live::{LiveAdapter, LiveConfig};
pub use rate::{Admission, RateBudget, RateLimiter, RateWindow, WINDOW};
pub use retry::{complete_with_retry, RetryPolicy, RetryOutcome};

pub const MAX_TEMPERATURE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRequest {
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u64,
    pub prompt: String,
}

impl ModelRequest {
    /// A request with temperature pinned to 0.
    pub fn new(model_id: impl Into<String>, max_output_tokens: u64, prompt: impl Into<String>) -> Self {
        ModelRequest {
            model_id: model_id.into(),
            temperature: 0.0,
            max_output_tokens,
            prompt: prompt.into(),
        }
    }

    /// Temperatures above zero are refused unless explicitly allowed.
    pub fn validate(&self, allow_nonzero_temperature: bool) -> Result<(), ProviderError> {
        if !(0.0..=MAX_TEMPERATURE).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, {MAX_TEMPERATURE}]",
                self.temperature
            )));
        }
        if self.temperature > 0.0 && !allow_nonzero_temperature {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} requires the explicit non-zero temperature override",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        if self.model_id.is_empty() {
            return Err(ProviderError::InvalidRequest("empty model id".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Complete,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub stop_reason: StopReason,
}

/// Error classes eligible for retrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorClass {
    Timeout,
    RateLimited,
    ServerError,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited by provider")]
    RateLimited,
    #[error("provider server error: {0}")]
    ServerError(String),
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected provider response: {0}")]
    InvalidResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cassette store error: {0}")]
    Store(String),
    #[error("request needs {tokens} tokens but the per-minute budget is {budget}")]
    Unadmittable { tokens: u64, budget: u64 },
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted {
        attempts: u32,
        last: Box<ProviderError>,
    },
}

impl ProviderError {
    pub fn class(&self) -> Option<ErrorClass> {
        match self {
            ProviderError::Timeout => Some(ErrorClass::Timeout),
            ProviderError::RateLimited => Some(ErrorClass::RateLimited),
            ProviderError::ServerError(_) => Some(ErrorClass::ServerError),
            _ => None,
        }
    }
}

/// Anything that turns a request into a completion.
pub trait CompletionAdapter: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError>;
}

impl<T: CompletionAdapter + ?Sized> CompletionAdapter for &T {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: CompletionAdapter + ?Sized> CompletionAdapter for Box<T> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

impl<T: CompletionAdapter + ?Sized> CompletionAdapter for std::sync::Arc<T> {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ProviderError> {
        (**self).complete(request)
    }
}

/// Lowercase hex digest identifying a request.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn parse(s: &str) -> Option<Self> {
        (s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
            .then(|| CacheKey(s.to_string()))
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 over the request fields, each written as an 8-byte little-endian
/// length followed by its UTF-8 bytes, in the order model id, temperature
/// (shortest round-trip decimal), max output tokens (decimal), prompt.
pub fn cache_key(request: &ModelRequest) -> CacheKey {
    let mut hasher = Sha256::new();
    let fields = [
        request.model_id.clone(),
        format!("{}", request.temperature),
        request.max_output_tokens.to_string(),
    ];
    for f in fields.iter().map(String::as_str).chain(std::iter::once(request.prompt.as_str())) {
        hasher.update((f.len() as u64).to_le_bytes());
        hasher.update(f.as_bytes());
    }
    CacheKey(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> ModelRequest {
        ModelRequest::new("claude-3-opus-20240229", 4096, "Extract species from:\nCistus crispus L.")
    }

    #[test]
    fn identical_requests_share_a_key() {
        assert_eq!(cache_key(&req()), cache_key(&req()));
    }

    #[test]
    fn temperature_changes_the_key() {
        let mut warm = req();
        warm.temperature = 0.7;
        assert_ne!(cache_key(&req()), cache_key(&warm));
    }

    #[test]
    fn field_boundaries_are_unambiguous() {
        let a = ModelRequest::new("ab", 1, "c");
        let b = ModelRequest::new("a", 1, "bc");
        assert_ne!(cache_key(&a), cache_key(&b));
    }

    // Frozen from Python's hashlib over the same length-prefixed encoding.
    #[test]
    fn canonical_request_key_is_stable() {
        assert_eq!(
            cache_key(&req()).as_str(),
            "3cab9d7791e4b51a0b625f34a338113bfbc5ee7ba9321e507baf2c99e0a73f18"
        );
    }

    #[test]
    fn temperature_policy() {
        let mut r = req();
        assert!(r.validate(false).is_ok());
        r.temperature = 0.7;
        assert!(matches!(r.validate(false), Err(ProviderError::InvalidRequest(_))));
        assert!(r.validate(true).is_ok());
        r.temperature = 2.5;
        assert!(r.validate(true).is_err());
    }

    #[test]
    fn key_parsing() {
        let k = cache_key(&req());
        assert_eq!(CacheKey::parse(k.as_str()), Some(k));
        assert_eq!(CacheKey::parse("ABC"), None);
    }
}
