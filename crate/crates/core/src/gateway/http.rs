//! Chat-completions HTTP backend.

use std::time::Duration;

use serde_json::{json, Value};

use super::{AttemptError, CompletionBackend, EndpointConfig, GatewayError};

/// Speaks the de-facto standard `/v1/chat/completions` wire format and
/// consumes the first choice's message text.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new() -> Self {
        HttpBackend { client: reqwest::blocking::Client::new() }
    }

    fn endpoint_url(base_url: &str) -> String {
        let base = base_url.trim_end_matches('/');
        if base.ends_with("/v1") {
            format!("{base}/chat/completions")
        } else {
            format!("{base}/v1/chat/completions")
        }
    }
}

impl Default for HttpBackend {
    fn default() -> Self {
        HttpBackend::new()
    }
}

impl CompletionBackend for HttpBackend {
    fn complete_once(
        &self,
        cfg: &EndpointConfig,
        prompt: &str,
        seed: u64,
    ) -> Result<String, AttemptError> {
        let body = json!({
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.decoding.temperature,
            "top_p": cfg.decoding.top_p,
            "max_tokens": cfg.decoding.max_tokens,
            "n": cfg.decoding.n,
            "seed": seed,
        });
        let mut request = self
            .client
            .post(Self::endpoint_url(&cfg.base_url))
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .json(&body);
        if let Some(var) = &cfg.api_key_env {
            let key = std::env::var(var).map_err(|_| {
                AttemptError::Fatal(GatewayError::Config(format!(
                    "api key environment variable {var} is not set"
                )))
            })?;
            request = request.bearer_auth(key);
        }

        let response = request.send().map_err(|e| {
            // Timeouts and connection-level failures are transient by
            // policy; the retry budget bounds the damage either way.
            AttemptError::Retryable(if e.is_timeout() {
                "request timed out".to_owned()
            } else {
                format!("transport failure: {e}")
            })
        })?;

        let status = response.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(AttemptError::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let message = response.text().unwrap_or_default();
            let message = message.chars().take(200).collect();
            return Err(AttemptError::Fatal(GatewayError::Client {
                status: status.as_u16(),
                message,
            }));
        }

        let payload: Value = response.json().map_err(|e| {
            AttemptError::Fatal(GatewayError::BadResponse(format!("body is not JSON: {e}")))
        })?;
        payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_owned)
            .ok_or_else(|| {
                AttemptError::Fatal(GatewayError::BadResponse(
                    "missing choices[0].message.content".to_owned(),
                ))
            })
    }
}
