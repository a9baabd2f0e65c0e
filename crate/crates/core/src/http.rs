//! Blocking JSON-over-HTTP client with bounded retries and a minimum
//! interval between requests.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum HttpError {
    #[error("failed to build HTTP client: {0}")]
    Build(String),
    #[error("request to {url} failed after {attempts} attempt(s): {message}")]
    Exhausted {
        url: String,
        attempts: u32,
        message: String,
    },
    #[error("request to {url} rejected with status {status}: {body}")]
    Rejected {
        url: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {url}: {message}")]
    Decode { url: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
    /// Minimum spacing between consecutive requests from one client.
    pub min_interval_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 250,
            max_backoff_ms: 8_000,
            min_interval_ms: 0,
            timeout_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Exponential backoff for the given (0-based) retry, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(20)).unwrap_or(u64::MAX);
        let ms = self
            .initial_backoff_ms
            .saturating_mul(factor)
            .min(self.max_backoff_ms);
        Duration::from_millis(ms)
    }
}

pub fn is_retryable_status(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT
        || status.is_server_error()
}

pub struct JsonClient {
    client: reqwest::blocking::Client,
    bearer: Option<String>,
    policy: RetryPolicy,
    last_request: Mutex<Option<Instant>>,
}

impl std::fmt::Debug for JsonClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JsonClient")
            .field("policy", &self.policy)
            .field("bearer", &self.bearer.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl JsonClient {
    pub fn new(bearer: Option<String>, policy: RetryPolicy) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(policy.timeout_ms))
            .build()
            .map_err(|e| HttpError::Build(e.to_string()))?;
        Ok(Self {
            client,
            bearer,
            policy,
            last_request: Mutex::new(None),
        })
    }

    fn pace(&self) {
        if self.policy.min_interval_ms == 0 {
            return;
        }
        let min = Duration::from_millis(self.policy.min_interval_ms);
        let mut last = self.last_request.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < min {
                std::thread::sleep(min - elapsed);
            }
        }
        *last = Some(Instant::now());
    }

    pub fn post_json<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        body: &B,
    ) -> Result<R, HttpError> {
        let attempts = self.policy.max_retries + 1;
        let mut last_message = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.policy.backoff(attempt - 1));
            }
            self.pace();
            let mut req = self.client.post(url).json(body);
            if let Some(token) = &self.bearer {
                req = req.bearer_auth(token);
            }
            let resp = match req.send() {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("POST {url} attempt {} failed: {e}", attempt + 1);
                    last_message = e.to_string();
                    continue;
                }
            };
            let status = resp.status();
            if status.is_success() {
                let text = resp.text().map_err(|e| HttpError::Decode {
                    url: url.to_string(),
                    message: e.to_string(),
                })?;
                return serde_json::from_str(&text).map_err(|e| HttpError::Decode {
                    url: url.to_string(),
                    message: e.to_string(),
                });
            }
            if is_retryable_status(status) {
                if let Some(wait) = retry_after(&resp) {
                    std::thread::sleep(wait.min(Duration::from_millis(self.policy.max_backoff_ms)));
                }
                last_message = format!("status {status}");
                log::warn!("POST {url} attempt {} got {status}", attempt + 1);
                continue;
            }
            let body = resp.text().unwrap_or_default();
            return Err(HttpError::Rejected {
                url: url.to_string(),
                status: status.as_u16(),
                body,
            });
        }
        Err(HttpError::Exhausted {
            url: url.to_string(),
            attempts,
            message: last_message,
        })
    }
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    resp.headers()
        .get(reqwest::header::RETRY_AFTER)?
        .to_str()
        .ok()?
        .trim()
        .parse::<u64>()
        .ok()
        .map(Duration::from_secs)
}

/// Reads a secret from the environment; blank values count as unset.
pub fn env_secret(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|v| !v.trim().is_empty())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
            ..Default::default()
        };
        assert_eq!(p.backoff(0), Duration::from_millis(100));
        assert_eq!(p.backoff(1), Duration::from_millis(200));
        assert_eq!(p.backoff(2), Duration::from_millis(350));
        assert_eq!(p.backoff(40), Duration::from_millis(350));
    }

    #[test]
    fn retryable_statuses() {
        assert!(is_retryable_status(StatusCode::TOO_MANY_REQUESTS));
        assert!(is_retryable_status(StatusCode::BAD_GATEWAY));
        assert!(!is_retryable_status(StatusCode::UNAUTHORIZED));
        assert!(!is_retryable_status(StatusCode::BAD_REQUEST));
    }
}
