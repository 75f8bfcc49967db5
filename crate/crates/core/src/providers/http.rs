//! OpenAI-compatible HTTP providers.
//!
//! Chat: `POST {base_url}/chat/completions` with `{model, messages, temperature}`,
//! reading `choices[0].message.content`. Embeddings: `POST {base_url}/embeddings`
//! with `{model, input}`, reading `data[0].embedding`.
//!
//! Transient failures (connection errors, timeouts, HTTP 429 and 5xx) are
//! retried with exponential backoff. Calls pass through a shared [`Limiter`]
//! that caps in-flight requests and requests per minute.

use std::collections::VecDeque;
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use serde_json::{json, Value};

use super::{ChatProvider, ChatRequest, EmbeddingVector, Embedder, ProviderError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, failed_attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(failed_attempt.saturating_sub(1))
    }
}

#[derive(Debug)]
struct LimiterState {
    in_flight: usize,
    recent: VecDeque<Instant>,
}

/// Concurrency cap plus a sliding one-minute request window.
#[derive(Debug)]
pub struct Limiter {
    max_concurrent: usize,
    per_minute: Option<usize>,
    state: Mutex<LimiterState>,
    freed: Condvar,
}

pub struct LimiterPermit<'a> {
    limiter: &'a Limiter,
}

impl Drop for LimiterPermit<'_> {
    fn drop(&mut self) {
        let mut state = self.limiter.state.lock().expect("limiter poisoned");
        state.in_flight -= 1;
        self.limiter.freed.notify_one();
    }
}

impl Limiter {
    pub fn new(max_concurrent: usize, per_minute: Option<usize>) -> Self {
        Self {
            max_concurrent: max_concurrent.max(1),
            per_minute: per_minute.filter(|&n| n > 0),
            state: Mutex::new(LimiterState {
                in_flight: 0,
                recent: VecDeque::new(),
            }),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> LimiterPermit<'_> {
        let mut state = self.state.lock().expect("limiter poisoned");
        loop {
            while state.in_flight >= self.max_concurrent {
                state = self.freed.wait(state).expect("limiter poisoned");
            }
            let Some(limit) = self.per_minute else { break };
            let now = Instant::now();
            while state.recent.front().is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60)) {
                state.recent.pop_front();
            }
            if state.recent.len() < limit {
                state.recent.push_back(now);
                break;
            }
            let wait = Duration::from_secs(60) - now.duration_since(state.recent[0]);
            state = self.freed.wait_timeout(state, wait).expect("limiter poisoned").0;
        }
        state.in_flight += 1;
        LimiterPermit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        self.state.lock().expect("limiter poisoned").in_flight
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads the API key from the named environment variable.
    pub fn with_api_key_env(mut self, var: &str) -> Result<Self, ProviderError> {
        let key = std::env::var(var)
            .map_err(|_| ProviderError::Config(format!("environment variable {var} is not set")))?;
        self.api_key = Some(key);
        Ok(self)
    }
}

struct Transport {
    config: HttpConfig,
    client: Client,
    limiter: Arc<Limiter>,
}

impl Transport {
    fn new(config: HttpConfig, limiter: Arc<Limiter>) -> Result<Self, ProviderError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self { config, client, limiter })
    }

    fn post(&self, endpoint: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{endpoint}", self.config.base_url.trim_end_matches('/'));
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            let outcome = {
                let _permit = self.limiter.acquire();
                let mut req = self.client.post(&url).json(body);
                if let Some(key) = &self.config.api_key {
                    req = req.bearer_auth(key);
                }
                req.send()
            };
            let retryable = match outcome {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let text = resp.text().map_err(|e| ProviderError::Protocol(e.to_string()))?;
                        return serde_json::from_str(&text)
                            .map_err(|e| ProviderError::Protocol(format!("malformed reply: {e}")));
                    }
                    let body = resp.text().unwrap_or_default();
                    let err = ProviderError::Http {
                        status: status.as_u16(),
                        attempts: attempt,
                        body,
                    };
                    if status.as_u16() == 429 || status.is_server_error() {
                        err
                    } else {
                        return Err(err);
                    }
                }
                Err(e) => ProviderError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt >= policy.max_attempts {
                return Err(retryable);
            }
            log::warn!("{url}: attempt {attempt} failed ({retryable}); retrying");
            thread::sleep(policy.backoff(attempt));
        }
    }
}

pub struct HttpChatProvider {
    transport: Transport,
}

impl HttpChatProvider {
    pub fn new(config: HttpConfig, limiter: Arc<Limiter>) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new(config, limiter)?,
        })
    }
}

pub(crate) fn chat_body(model: &str, request: &ChatRequest) -> Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_prompt},
        ],
        "temperature": request.temperature,
    })
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let reply = self
            .transport
            .post("chat/completions", &chat_body(&self.transport.config.model, request))?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| ProviderError::Protocol("reply lacks choices[0].message.content".into()))
    }

    fn model_id(&self) -> &str {
        &self.transport.config.model
    }
}

pub struct HttpEmbedder {
    transport: Transport,
}

impl HttpEmbedder {
    pub fn new(config: HttpConfig, limiter: Arc<Limiter>) -> Result<Self, ProviderError> {
        Ok(Self {
            transport: Transport::new(config, limiter)?,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let body = json!({"model": self.transport.config.model, "input": text});
        let reply = self.transport.post("embeddings", &body)?;
        let values = reply
            .pointer("/data/0/embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| ProviderError::Protocol("reply lacks data[0].embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| ProviderError::Protocol("non-numeric embedding value".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        EmbeddingVector::new(values)
    }

    fn model_id(&self) -> &str {
        &self.transport.config.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::Task;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(2), Duration::from_millis(1000));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
    }

    #[test]
    fn chat_body_shape() {
        let body = chat_body("m", &ChatRequest::new(Task::ClosedBook, "q", 0.0));
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][1]["role"], "user");
        assert_eq!(body["messages"][1]["content"], "q");
        assert_eq!(body["temperature"], 0.0);
    }

    #[test]
    fn limiter_caps_concurrency() {
        let limiter = Arc::new(Limiter::new(2, None));
        let peak = Arc::new(Mutex::new(0usize));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let limiter = Arc::clone(&limiter);
                let peak = Arc::clone(&peak);
                thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = limiter.in_flight();
                    let mut m = peak.lock().unwrap();
                    *m = (*m).max(now);
                    drop(m);
                    thread::sleep(Duration::from_millis(20));
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(*peak.lock().unwrap() <= 2);
        assert_eq!(limiter.in_flight(), 0);
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let mut config = HttpConfig::new("http://127.0.0.1:1", "m");
        config.retry = RetryPolicy {
            max_attempts: 3,
            initial_backoff: Duration::from_millis(1),
        };
        let chat = HttpChatProvider::new(config, Arc::new(Limiter::new(4, None))).unwrap();
        match chat.chat(&ChatRequest::new(Task::ClosedBook, "q", 0.0)) {
            Err(ProviderError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
