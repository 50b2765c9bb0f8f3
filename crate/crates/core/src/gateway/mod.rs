//! Uniform client over chat-completion endpoints.
//!
//! The pipeline talks to two endpoints (policy model, judge model)
//! through one [`Gateway`] that adds bounded retries with jittered
//! exponential backoff and bounded-parallel batching. Backends are
//! pluggable: [`HttpBackend`] speaks the common chat-completions wire
//! format, [`MockBackend`] is a deterministic stand-in for tests and
//! offline runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod http;
mod mock;

pub use http::HttpBackend;
pub use mock::MockBackend;

/// Sampling parameters sent with every completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    /// Generations per wire request. The pipeline requests one rollout
    /// per call (each with its own seed), so this stays 1.
    pub n: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        DecodingParams { temperature: 1.0, top_p: 1.0, max_tokens: 512, n: 1 }
    }
}

/// Connection and decoding settings for one model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Only the
    /// name is stored; the secret is read at request time and never
    /// logged or serialized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    #[serde(default)]
    pub decoding: DecodingParams,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://127.0.0.1:8000".to_owned(),
            model_name: "policy".to_owned(),
            api_key_env: None,
            timeout_secs: 30,
            max_retries: 3,
            decoding: DecodingParams::default(),
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_secs == 0 {
            return Err(GatewayError::Config("timeout_secs must be > 0".to_owned()));
        }
        if self.decoding.temperature < 0.0 {
            return Err(GatewayError::Config("temperature must be >= 0".to_owned()));
        }
        if self.base_url.is_empty() {
            return Err(GatewayError::Config("base_url must not be empty".to_owned()));
        }
        Ok(())
    }
}

/// Terminal gateway errors, after retries are spent.
#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Exhausted { attempts: u32, message: String },

    #[error("endpoint rejected the request (HTTP {status}): {message}")]
    Client { status: u16, message: String },

    #[error("endpoint response unusable: {0}")]
    BadResponse(String),

    #[error("invalid endpoint config: {0}")]
    Config(String),
}

impl GatewayError {
    /// True for errors that indicate the endpoint itself was unreachable
    /// or kept failing, as opposed to rejecting this particular request.
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Exhausted { .. })
    }
}

/// Outcome of one attempt, before the retry policy is applied.
#[derive(Debug)]
pub enum AttemptError {
    /// Timeout, HTTP 5xx, or 429: eligible for backoff and retry.
    Retryable(String),
    /// Everything else: surfaced immediately.
    Fatal(GatewayError),
}

/// A backend turns one prompt into one completion, once.
pub trait CompletionBackend: Send + Sync {
    fn complete_once(
        &self,
        cfg: &EndpointConfig,
        prompt: &str,
        seed: u64,
    ) -> Result<String, AttemptError>;
}

/// One prompt plus the decoding seed distinguishing it from sibling
/// rollouts of the same context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub seed: u64,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>, seed: u64) -> Self {
        GenerationRequest { prompt: prompt.into(), seed }
    }
}

/// Exponential backoff with full jitter: the nth retry sleeps a uniform
/// random duration in [0, base * factor^(n-1)], capped at `max_delay`.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub base_delay: Duration,
    pub factor: f64,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay: Duration::from_millis(500),
            factor: 2.0,
            max_delay: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts; used with mock backends and tests.
    pub fn immediate() -> Self {
        RetryPolicy { base_delay: Duration::ZERO, factor: 1.0, max_delay: Duration::ZERO }
    }

    /// Sleep duration before retry number `retry` (1-based), drawn with
    /// full jitter from `rng`.
    pub fn delay_for<R: Rng>(&self, retry: u32, rng: &mut R) -> Duration {
        let ceiling = self
            .base_delay
            .mul_f64(self.factor.powi(retry.saturating_sub(1) as i32))
            .min(self.max_delay);
        if ceiling.is_zero() {
            return Duration::ZERO;
        }
        ceiling.mul_f64(rng.gen_range(0.0..=1.0))
    }
}

/// Retry- and parallelism-aware completion client.
pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    retry: RetryPolicy,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>) -> Self {
        Gateway { backend, retry: RetryPolicy::default() }
    }

    /// A gateway over the deterministic mock backend, with no retry
    /// sleeps.
    pub fn mock(backend: MockBackend) -> Self {
        Gateway::new(Arc::new(backend)).with_retry_policy(RetryPolicy::immediate())
    }

    pub fn with_retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Complete one prompt, retrying retryable failures up to
    /// `cfg.max_retries` times (so at most `max_retries + 1` attempts).
    pub fn complete(
        &self,
        cfg: &EndpointConfig,
        request: &GenerationRequest,
    ) -> Result<String, GatewayError> {
        cfg.validate()?;
        let attempts_allowed = cfg.max_retries + 1;
        let mut last_message = String::new();
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                let delay = self.retry.delay_for(attempt - 1, &mut rand::thread_rng());
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
            }
            match self.backend.complete_once(cfg, &request.prompt, request.seed) {
                Ok(text) => return Ok(text),
                Err(AttemptError::Retryable(message)) => last_message = message,
                Err(AttemptError::Fatal(error)) => return Err(error),
            }
        }
        Err(GatewayError::Exhausted { attempts: attempts_allowed, message: last_message })
    }

    /// Complete a batch with at most `parallelism` requests in flight.
    /// Results come back keyed by input index, in input order; per-item
    /// errors never abort the batch.
    pub fn complete_batch(
        &self,
        cfg: &EndpointConfig,
        requests: &[GenerationRequest],
        parallelism: usize,
    ) -> Vec<(usize, Result<String, GatewayError>)> {
        let workers = parallelism.max(1).min(requests.len());
        let slots: Mutex<Vec<Option<Result<String, GatewayError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let outcome = self.complete(cfg, &requests[i]);
                    slots.lock().expect("result slots poisoned")[i] = Some(outcome);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots poisoned")
            .into_iter()
            .enumerate()
            .map(|(i, slot)| (i, slot.expect("every index visited")))
            .collect()
    }
}
