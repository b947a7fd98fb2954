use std::fmt;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};

/// Outcome of one chat request that did not produce a reply.
#[derive(Debug, Clone, PartialEq)]
pub enum CallError {
    /// HTTP 429; `retry_after` from the header when present.
    RateLimited { retry_after: Option<Duration> },
    /// 5xx or transport failure; worth retrying.
    Transient(String),
    /// Anything else (bad key, bad request); retrying will not help.
    Fatal(String),
}

impl fmt::Display for CallError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CallError::RateLimited { .. } => write!(f, "rate limited (HTTP 429)"),
            CallError::Transient(m) | CallError::Fatal(m) => f.write_str(m),
        }
    }
}

/// A single-turn chat completion endpoint.
pub trait ChatClient: Sync {
    fn complete(&self, prompt: &str) -> std::result::Result<String, CallError>;
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
pub struct HttpChatClient {
    endpoint_url: String,
    api_key: Option<String>,
    model: String,
    temperature: f64,
    max_tokens: u32,
    agent: ureq::Agent,
}

// The key must never end up in logs.
impl fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("endpoint_url", &self.endpoint_url)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(
        endpoint_url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint_url: endpoint_url.into(),
            api_key,
            model: model.into(),
            temperature,
            max_tokens,
            agent,
        }
    }

    /// Reads the key from the environment variable `var`.
    pub fn api_key_from_env(var: &str) -> Result<String> {
        std::env::var(var)
            .ok()
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::MissingSecret(var.to_string()))
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, prompt: &str) -> std::result::Result<String, CallError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let mut req = self.agent.post(&self.endpoint_url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| CallError::Transient(format!("transport: {e}")))?;
        let status = resp.status().as_u16();
        match status {
            200..=299 => {
                let parsed: ChatResponse = resp
                    .body_mut()
                    .read_json()
                    .map_err(|e| CallError::Fatal(format!("unreadable response body: {e}")))?;
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .map(|c| c.message.content.unwrap_or_default())
                    .ok_or_else(|| CallError::Fatal("response has no choices".into()))
            }
            429 => Err(CallError::RateLimited {
                retry_after: resp
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok())
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|s| s.is_finite() && *s >= 0.0)
                    .map(Duration::from_secs_f64),
            }),
            500..=599 => Err(CallError::Transient(format!("HTTP {status}"))),
            _ => Err(CallError::Fatal(format!("HTTP {status}"))),
        }
    }
}

/// Spaces calls at least `1 / rate` seconds apart across all threads.
#[derive(Debug)]
pub struct Throttle {
    interval: Option<Duration>,
    next: Mutex<Instant>,
}

impl Throttle {
    /// `requests_per_second <= 0` disables throttling.
    pub fn new(requests_per_second: f64) -> Self {
        let interval = (requests_per_second > 0.0 && requests_per_second.is_finite())
            .then(|| Duration::from_secs_f64(1.0 / requests_per_second));
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let slot = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let slot = (*next).max(Instant::now());
            *next = slot + interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn debug_redacts_key() {
        let c = HttpChatClient::new("http://x", Some("sk-secret".into()), "m", 1.0, 4, Duration::from_secs(1));
        let s = format!("{c:?}");
        assert!(!s.contains("sk-secret") && s.contains("redacted"));
    }

    #[test]
    fn throttle_spaces_calls() {
        let t = Throttle::new(200.0);
        let start = Instant::now();
        for _ in 0..5 {
            t.wait();
        }
        assert!(start.elapsed() >= Duration::from_millis(19));
    }
}
